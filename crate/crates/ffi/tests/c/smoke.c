#include <stdio.h>
#include <string.h>
#include "curvecast.h"

int main(void) {
    double p = 0.0;
    if (cc_microprice(9750.0, 9750.5, 300, 100, &p) != CC_STATUS_OK) return 1;
    if (p != 9750.375) return 2;
    if (cc_microprice(1.0, 2.0, 0, 0, &p) != CC_STATUS_DATA_ERROR) return 3;
    if (strlen(cc_last_error()) == 0) return 4;
    double a = 0.0;
    if (cc_size_position(0.3, 0.1, CC_STRATEGY_AL_EP, 0.1, 0.3, 0.1, 0.0, &a) != CC_STATUS_OK) return 5;
    if (a != 1.0) return 6;
    double r[3] = {1.0, 2.0, 3.0};
    double s = 0.0;
    if (cc_sharpe(r, 3, &s) != CC_STATUS_OK || s != 2.0) return 7;
    CcModel *m = NULL;
    if (cc_model_load("/nonexistent/model.json", &m) != CC_STATUS_DATA_ERROR || m != NULL) return 8;
    printf("ok\n");
    return 0;
}
