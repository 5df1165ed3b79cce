#include <math.h>
#include <stdio.h>
#include "socialnav.h"

int main(int argc, char **argv) {
    if (argc < 2) return 2;
    SnSession *s = NULL;
    if (sn_session_open(argv[1], "ss-mpc-dcbf", 0, &s) != SN_STATUS_OK) {
        fprintf(stderr, "%s\n", sn_last_error());
        return 1;
    }
    if (sn_session_run(s) != SN_STATUS_OK) return 1;
    SnMetrics m;
    SnPose p;
    if (sn_session_metrics(s, &m) != SN_STATUS_OK || sn_session_robot_pose(s, &p) != SN_STATUS_OK) return 1;
    printf("%d %d %.6f %.6f %.6f\n", m.success, m.collided, m.time, p.x, p.y);
    sn_session_free(s);
    return sn_session_step(NULL, NULL) == SN_STATUS_NULL_POINTER ? 0 : 1;
}
