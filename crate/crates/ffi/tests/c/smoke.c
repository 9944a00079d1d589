/* End-to-end exercise of the C surface: build a map, fit, read results. */

#include "mvrisk.h"

#include <stdint.h>
#include <stdio.h>
#include <string.h>

static int fail(const char *what) {
    char buf[512];
    mvrisk_last_error(buf, sizeof buf);
    fprintf(stderr, "%s: %s\n", what, buf);
    return 1;
}

int main(void) {
    mvrisk_graph *graph = NULL;
    if (mvrisk_graph_lattice(3, 3, &graph) != MVRISK_OK)
        return fail("lattice");
    if (mvrisk_graph_n_areas(graph) != 9)
        return fail("n_areas");

    const char *names[2] = {"first", "second"};
    uint64_t observed[18];
    double expected[18];
    for (int n = 0; n < 18; n++) {
        observed[n] = (uint64_t)((n * 13 + 5) % 9 + 1);
        expected[n] = 3.0 + (double)(n % 5);
    }
    mvrisk_panel *panel = NULL;
    if (mvrisk_panel_new(graph, names, 2, observed, expected, &panel) != MVRISK_OK)
        return fail("panel");

    mvrisk_fit_options opts = mvrisk_fit_options_default();
    opts.draws = 25;
    opts.seed = 5;
    mvrisk_result *result = NULL;
    if (mvrisk_fit(graph, panel, &opts, &result) != MVRISK_OK)
        return fail("fit");
    if (mvrisk_result_n_draws(result) != 25)
        return fail("n_draws");

    double means[18];
    if (mvrisk_result_risk_summary(result, MVRISK_FIELD_MEAN, means, 18) != MVRISK_OK)
        return fail("summary");
    for (int n = 0; n < 18; n++)
        if (!(means[n] > 0.0))
            return fail("mean positivity");

    /* Wrong buffer length must be rejected, not written past. */
    if (mvrisk_result_risk_summary(result, MVRISK_FIELD_MEAN, means, 17) != MVRISK_INVALID_ARGUMENT)
        return fail("length check");

    char name[32];
    size_t need = mvrisk_result_param_name(result, 0, name, sizeof name);
    if (need == 0 || strcmp(name, "sigma2_first") != 0)
        return fail("param name");

    mvrisk_criteria crit;
    if (mvrisk_result_criteria(result, &crit) != MVRISK_OK)
        return fail("criteria");
    if (!(crit.dic > 0.0 && crit.waic > 0.0))
        return fail("criteria values");

    mvrisk_result_free(result);
    mvrisk_panel_free(panel);
    mvrisk_graph_free(graph);
    puts("ok");
    return 0;
}
