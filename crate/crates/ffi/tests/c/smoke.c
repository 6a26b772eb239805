#include <math.h>
#include <stdio.h>
#include "clp_lab.h"

#define CHECK(cond)                                              \
    do {                                                         \
        if (!(cond)) {                                           \
            fprintf(stderr, "check failed line %d\n", __LINE__); \
            return 1;                                            \
        }                                                        \
    } while (0)

int main(void) {
    ClpEnv *env = NULL;
    CHECK(clp_env_counterexample(&env) == CLP_STATUS_OK);
    size_t c = 0, a = 0, m = 0;
    CHECK(clp_env_dims(env, &c, &a, &m) == CLP_STATUS_OK);
    CHECK(c == 1 && a == 3 && m == 2);

    double w[2] = {1.0, 0.0};
    double probs[3];
    CHECK(clp_optimal_policy(env, 0.5, w, 2, probs, 3) == CLP_STATUS_OK);
    double e = exp(1.0);
    CHECK(fabs(probs[0] - e / (e + 1.0 + exp(0.75))) < 1e-12);

    CHECK(clp_optimal_policy(env, 0.5, w, 2, probs, 2) == CLP_STATUS_BUFFER_TOO_SMALL);
    char msg[128];
    CHECK(clp_last_error_message(msg, sizeof msg) > 0);

    double u = 0.0;
    CHECK(clp_f_mix(1.0, 0.01, &u) == CLP_STATUS_OK && u == 1.0);
    CHECK(clp_f_mix(0.001, 0.01, &u) == CLP_STATUS_INVALID_ARGUMENT);

    double bound = 0.0;
    CHECK(clp_mixing_bound(0.01, 0.5, 2.0, 2.0, 0.1, 1.0, 3, &bound) == CLP_STATUS_OK);
    CHECK(fabs(bound - 1.2160) < 1e-4);

    clp_env_free(env);
    printf("ok %s\n", clp_version());
    return 0;
}
