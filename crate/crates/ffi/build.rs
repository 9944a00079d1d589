fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let config = cbindgen::Config::from_file(format!("{crate_dir}/cbindgen.toml"))
        .expect("cbindgen.toml is malformed");
    let bindings = cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("C header generation failed");

    let out = std::path::PathBuf::from(std::env::var("OUT_DIR").unwrap()).join("mvrisk.h");
    bindings.write_to_file(&out);

    // Refresh the committed copy too, so C users get the header without
    // building; skipped when the source tree is read-only.
    let include_dir = format!("{crate_dir}/include");
    if std::fs::create_dir_all(&include_dir).is_ok() {
        bindings.write_to_file(format!("{include_dir}/mvrisk.h"));
    }
}
