#include <stdio.h>
#include <stdlib.h>

#include "nmfx.h"

/* Rank-2 planted tensor: channels 0-1 follow topic 0, channels 2-3 topic 1. */
int main(void) {
    enum { N = 2, P = 4, D1 = 3, D2 = 3 };
    double data[N * P * D1 * D2];
    for (int i = 0; i < N; i++)
        for (int c = 0; c < P; c++)
            for (int r = 0; r < D1 * D2; r++) {
                double t0 = (r % 2 == 0) ? 1.0 + r : 0.0;
                double t1 = (r % 2 == 1) ? 2.0 + i : 0.0;
                data[((i * P) + c) * D1 * D2 + r] = c < 2 ? t0 : t1;
            }

    NmfxFeatures *features = NULL;
    if (nmfx_features_from_buffer(data, N, P, D1, D2, &features) != NMFX_STATUS_OK) {
        fprintf(stderr, "features: %s\n", nmfx_last_error());
        return 1;
    }
    NmfxConfig cfg = nmfx_config_default(2);
    NmfxModel *model = NULL;
    if (nmfx_nmf_fit(features, &cfg, &model) != NMFX_STATUS_OK) {
        fprintf(stderr, "fit: %s\n", nmfx_last_error());
        return 1;
    }
    double heat[N * 2 * D1 * D2];
    if (nmfx_project(model, features, 1e-8, 1000, heat, N * 2 * D1 * D2) != NMFX_STATUS_OK) {
        fprintf(stderr, "project: %s\n", nmfx_last_error());
        return 1;
    }
    double small[1];
    if (nmfx_model_copy_topics(model, small, 1) != NMFX_STATUS_BUFFER_SIZE) {
        fprintf(stderr, "expected a buffer-size error\n");
        return 1;
    }
    printf("nmfx %s k=%zu p=%zu\n", nmfx_version(), nmfx_model_k(model), nmfx_model_channels(model));
    nmfx_model_free(model);
    nmfx_features_free(features);
    return 0;
}
