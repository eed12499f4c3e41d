#include <stdio.h>
#include "mbprei.h"

static const char *SPEC =
    "{\"d\": 2, \"states\": [{\"offspring\": ["
    "{\"kind\": \"finite\", \"support\": [{\"vector\": [1, 1], \"prob\": 1.0}]},"
    "{\"kind\": \"finite\", \"support\": [{\"vector\": [1, 1], \"prob\": 1.0}]}],"
    "\"immigration\": {\"kind\": \"finite\", \"support\": [{\"vector\": [1, 0], \"prob\": 1.0}]}}],"
    "\"state_probs\": [1.0]}";

int main(void) {
    MbpreiSpec *spec = NULL;
    MbpreiTrajectory *traj = NULL;
    uint64_t x[2];
    if (mbprei_spec_from_json(SPEC, &spec) != MBPREI_STATUS_OK) {
        char *msg = mbprei_last_error();
        fprintf(stderr, "spec: %s\n", msg);
        mbprei_string_free(msg);
        return 1;
    }
    if (mbprei_trajectory_simulate(spec, 0, 2, true, 1, &traj) != MBPREI_STATUS_OK) return 2;
    if (mbprei_trajectory_total(traj, 2, x, 2) != MBPREI_STATUS_OK) return 3;
    if (mbprei_spec_dim(NULL, NULL) != MBPREI_STATUS_NULL_POINTER) return 4;
    printf("%llu %llu\n", (unsigned long long)x[0], (unsigned long long)x[1]);
    mbprei_trajectory_free(traj);
    mbprei_spec_free(spec);
    return 0;
}
