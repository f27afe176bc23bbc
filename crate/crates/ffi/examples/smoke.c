#include <stdio.h>
#include "gyrolab.h"

int main(void) {
    const char *cfg = "[surface]\nkind = \"sphere\"\n[field]\nfamily = \"affine-height\"\nc0 = 2.0\nc1 = 1.0\n";
    GyrolabSystem *sys = NULL;
    if (gyrolab_system_from_toml(cfg, &sys) != GYROLAB_STATUS_OK) {
        char msg[256];
        gyrolab_last_error_message(msg, sizeof msg);
        fprintf(stderr, "%s\n", msg);
        return 1;
    }
    double t = 0.0;
    gyrolab_level_period(sys, 1.5707963267948966, 0.0, &t);
    printf("gyrolab %s: T(1/8) = %.12f\n", gyrolab_version(), t);
    gyrolab_system_free(sys);
    return 0;
}
