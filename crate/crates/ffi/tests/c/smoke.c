#include <stdio.h>
#include <string.h>

#include "ldtcast.h"

int main(void) {
    size_t a[4] = {0, 0, 1, 1};
    size_t b[4] = {1, 1, 0, 0};
    double ari = 0.0;
    if (ldt_adjusted_rand_index(a, b, 4, &ari) != LDT_STATUS_OK || ari != 1.0) {
        return 1;
    }
    LdtModel *m = NULL;
    if (ldt_model_load("/no/such/model.json", &m) != LDT_STATUS_IO || m != NULL) {
        return 2;
    }
    if (strstr(ldt_last_error(), "model.json") == NULL) {
        return 3;
    }
    printf("%s\n", ldt_version());
    return 0;
}
