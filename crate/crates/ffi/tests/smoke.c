#include <math.h>
#include <stdio.h>
#include <string.h>
#include "icubench.h"

int main(void) {
    double scores[4] = {0.1, 0.4, 0.35, 0.8};
    uint8_t labels[4] = {0, 0, 1, 1};
    double v = 0.0;
    if (icb_auroc(scores, labels, 4, &v) != ICB_STATUS_OK || fabs(v - 0.75) > 1e-12) return 1;
    if (icb_auroc(NULL, labels, 4, &v) != ICB_STATUS_NULL_POINTER) return 2;
    char msg[128];
    if (icb_last_error(msg, sizeof msg) == 0 || strstr(msg, "null") == NULL) return 3;
    IcbRunConfig *cfg = NULL;
    if (icb_config_new("window_hours = 96", &cfg) != ICB_STATUS_CONFIG || cfg != NULL) return 4;
    icb_config_free(cfg);
    if (fabs(icb_saps2_mortality(33) - 0.140) > 0.005) return 5;
    printf("icubench %s ok\n", icb_version());
    return 0;
}
