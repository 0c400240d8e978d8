#include <stdio.h>
#include <stdlib.h>

#include "chanprune.h"

#define CHECK(call)                                                         \
    do {                                                                    \
        CpStatus s_ = (call);                                               \
        if (s_ != CP_STATUS_OK) {                                           \
            char *msg = cp_last_error_message();                            \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, msg ? msg : "?"); \
            cp_string_free(msg);                                            \
            return 1;                                                       \
        }                                                                   \
    } while (0)

int main(void) {
    CpGraph *g = NULL;
    uint64_t flops = 0, params = 0, loss = 0;
    CHECK(cp_graph_zoo("vgg16", &g));
    CHECK(cp_graph_counts(g, &flops, &params));
    CHECK(cp_graph_floss(g, "conv1_2", &loss));
    printf("%llu %llu %llu\n", (unsigned long long)flops, (unsigned long long)params, (unsigned long long)loss);

    if (cp_graph_floss(g, "no_such_layer", &loss) != CP_STATUS_GRAPH) {
        return 2;
    }
    char *msg = cp_last_error_message();
    if (msg == NULL) {
        return 3;
    }
    cp_string_free(msg);

    float values[8] = {0, 1, 0, 1, 5, 6, 5, 6};
    uint32_t labels[4] = {0, 0, 1, 1};
    double score = 0;
    CHECK(cp_score_maps(values, labels, 4, 2, 1, 2, "gsd", 0, &score));
    printf("%.6f\n", score);

    cp_graph_free(g);
    return 0;
}
