//! Count ingestion: long-format CSV to a disease-major panel.
//!
//! The file needs `area`, `disease` and `observed` columns. Expected
//! counts come either directly from an `expected` column or are computed
//! by indirect standardization from `age_group` and `population` columns:
//! the study-wide rate per (disease, age group) is
//!
//! ```text
//!     m_jk = sum_i observed_ijk / sum_i population_ijk
//! ```
//!
//! and area i's expected count for disease j is `sum_k population_ijk *
//! m_jk`. With age columns present, multiple rows per (area, disease) are
//! summed; without them each cell must appear exactly once.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::AreaGraph;
use crate::inference::CountPanel;

pub fn read_counts_csv(path: &Path, graph: &AreaGraph) -> Result<CountPanel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_counts_csv(file, graph)
}

pub fn parse_counts_csv<R: Read>(reader: R, graph: &AreaGraph) -> Result<CountPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::input(format!("counts header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let c_area = col("area").ok_or_else(|| Error::input("counts file has no \"area\" column"))?;
    let c_disease =
        col("disease").ok_or_else(|| Error::input("counts file has no \"disease\" column"))?;
    let c_obs =
        col("observed").ok_or_else(|| Error::input("counts file has no \"observed\" column"))?;
    let c_expected = col("expected");
    let c_age = col("age_group");
    let c_pop = col("population");

    let by_age = match (c_expected, c_age, c_pop) {
        (Some(_), _, _) => false,
        (None, Some(_), Some(_)) => true,
        (None, _, _) => {
            return Err(Error::input(
                "counts file needs either an \"expected\" column or both \
                 \"age_group\" and \"population\" columns",
            ))
        }
    };

    let area_index: HashMap<&str, usize> = graph
        .area_ids()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let i_areas = graph.n_areas();

    // Diseases in first-appearance order.
    let mut disease_index: HashMap<String, usize> = HashMap::new();
    let mut disease_names: Vec<String> = Vec::new();

    struct Row {
        area: usize,
        disease: usize,
        observed: u64,
        expected: f64,
        age: Option<String>,
        population: f64,
    }
    let mut rows: Vec<Row> = Vec::new();

    for (recno, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::input(format!("counts row {}: {e}", recno + 2)))?;
        let err = |msg: String| Error::input(format!("counts row {}: {msg}", recno + 2));
        let get = |c: usize| -> Result<&str> {
            rec.get(c)
                .ok_or_else(|| err(format!("missing field {c}")))
        };
        let area_label = get(c_area)?;
        let area = *area_index
            .get(area_label)
            .ok_or_else(|| err(format!("area {area_label:?} is not in the graph")))?;
        let disease_label = get(c_disease)?.to_string();
        let disease = match disease_index.get(&disease_label) {
            Some(&d) => d,
            None => {
                let d = disease_names.len();
                disease_index.insert(disease_label.clone(), d);
                disease_names.push(disease_label);
                d
            }
        };
        let observed: u64 = get(c_obs)?
            .parse()
            .map_err(|_| err(format!("observed {:?} is not a count", get(c_obs).unwrap())))?;
        let (expected, age, population) = if by_age {
            let age = get(c_age.unwrap())?.to_string();
            let pop: f64 = get(c_pop.unwrap())?
                .parse()
                .map_err(|_| err("population does not parse".into()))?;
            if !(pop > 0.0) || !pop.is_finite() {
                return Err(err(format!("population {pop} must be positive")));
            }
            (0.0, Some(age), pop)
        } else {
            let e: f64 = get(c_expected.unwrap())?
                .parse()
                .map_err(|_| err("expected does not parse".into()))?;
            (e, None, 0.0)
        };
        rows.push(Row {
            area,
            disease,
            observed,
            expected,
            age,
            population,
        });
    }

    let j = disease_names.len();
    if j == 0 {
        return Err(Error::input("counts file has no data rows"));
    }
    let cells = i_areas * j;
    let mut observed = vec![0u64; cells];
    let mut expected = vec![0.0f64; cells];
    let mut seen = vec![false; cells];

    if by_age {
        // Pass one: study-wide rates per (disease, age group).
        let mut events: HashMap<(usize, String), f64> = HashMap::new();
        let mut persons: HashMap<(usize, String), f64> = HashMap::new();
        let mut dup: HashMap<(usize, usize, String), ()> = HashMap::new();
        for r in &rows {
            let age = r.age.clone().unwrap();
            if dup
                .insert((r.area, r.disease, age.clone()), ())
                .is_some()
            {
                return Err(Error::input(format!(
                    "duplicate row for area {:?}, disease {:?}, age group {age:?}",
                    graph.area_ids()[r.area],
                    disease_names[r.disease]
                )));
            }
            *events.entry((r.disease, age.clone())).or_insert(0.0) += r.observed as f64;
            *persons.entry((r.disease, age)).or_insert(0.0) += r.population;
        }
        // Pass two: accumulate observed and expected per cell.
        for r in &rows {
            let age = r.age.clone().unwrap();
            let n = r.disease * i_areas + r.area;
            let key = (r.disease, age);
            let rate = events[&key] / persons[&key];
            observed[n] += r.observed;
            expected[n] += r.population * rate;
            seen[n] = true;
        }
    } else {
        for r in &rows {
            let n = r.disease * i_areas + r.area;
            if seen[n] {
                return Err(Error::input(format!(
                    "duplicate row for area {:?}, disease {:?}",
                    graph.area_ids()[r.area],
                    disease_names[r.disease]
                )));
            }
            observed[n] = r.observed;
            expected[n] = r.expected;
            seen[n] = true;
        }
    }

    for n in 0..cells {
        if !seen[n] {
            return Err(Error::input(format!(
                "no row for area {:?}, disease {:?}",
                graph.area_ids()[n % i_areas],
                disease_names[n / i_areas]
            )));
        }
    }

    CountPanel::new(
        graph.area_ids().to_vec(),
        disease_names,
        observed,
        expected,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    fn graph3() -> AreaGraph {
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        build_graph(&[("a", "b"), ("b", "c")], &labels).unwrap()
    }

    #[test]
    fn direct_expected_column() {
        let g = graph3();
        let csv = "\
area,disease,observed,expected
a,lung,3,2.5
b,lung,1,2.0
c,lung,4,3.0
a,skin,0,1.0
b,skin,2,1.5
c,skin,1,1.2
";
        let p = parse_counts_csv(csv.as_bytes(), &g).unwrap();
        assert_eq!(p.n_diseases, 2);
        assert_eq!(p.disease_names, vec!["lung".to_string(), "skin".to_string()]);
        assert_eq!(p.observed(), &[3, 1, 4, 0, 2, 1]);
        assert_eq!(p.expected(), &[2.5, 2.0, 3.0, 1.0, 1.5, 1.2]);
    }

    #[test]
    fn indirect_standardization_matches_hand_computation() {
        let g = graph3();
        // One disease, two age groups. Study rates: young 3/300, old 6/150.
        let csv = "\
area,disease,observed,age_group,population
a,lung,1,young,100
a,lung,2,old,50
b,lung,2,young,150
b,lung,3,old,60
c,lung,0,young,50
c,lung,1,old,40
";
        let p = parse_counts_csv(csv.as_bytes(), &g).unwrap();
        assert_eq!(p.observed(), &[3, 5, 1]);
        let ry = 3.0 / 300.0;
        let ro = 6.0 / 150.0;
        let expect = [
            100.0 * ry + 50.0 * ro,
            150.0 * ry + 60.0 * ro,
            50.0 * ry + 40.0 * ro,
        ];
        for (a, b) in p.expected().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // Standardization preserves totals.
        let total_e: f64 = p.expected().iter().sum();
        assert!((total_e - 9.0).abs() < 1e-12);
    }

    #[test]
    fn missing_cell_is_an_error() {
        let g = graph3();
        let csv = "area,disease,observed,expected\na,lung,3,2.5\nb,lung,1,2.0\n";
        let e = parse_counts_csv(csv.as_bytes(), &g).unwrap_err();
        assert!(e.to_string().contains("no row for area"));
    }

    #[test]
    fn unknown_area_is_an_error() {
        let g = graph3();
        let csv = "area,disease,observed,expected\nzz,lung,3,2.5\n";
        assert!(parse_counts_csv(csv.as_bytes(), &g).is_err());
    }

    #[test]
    fn duplicate_cell_is_an_error() {
        let g = graph3();
        let csv = "\
area,disease,observed,expected
a,lung,3,2.5
a,lung,4,2.5
b,lung,1,2.0
c,lung,4,3.0
";
        let e = parse_counts_csv(csv.as_bytes(), &g).unwrap_err();
        assert!(e.to_string().contains("duplicate"));
    }

    #[test]
    fn needs_expected_or_age_data() {
        let g = graph3();
        let csv = "area,disease,observed\na,lung,3\n";
        let e = parse_counts_csv(csv.as_bytes(), &g).unwrap_err();
        assert!(e.to_string().contains("expected"));
    }
}
