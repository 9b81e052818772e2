#include "eisnn.h"
#include <stdio.h>
#include <assert.h>

int main(void) {
    printf("eisnn %s\n", eisnn_version());
    EisnnNetwork *net = NULL;
    EisnnStatus st = eisnn_network_new(16, 6, 3, 4, 20, 0.3, 0.3, 7, &net);
    assert(st == EISNN_STATUS_OK);
    double pixels[16];
    for (int i = 0; i < 16; i++) pixels[i] = i / 15.0;
    EisnnRaster *raster = NULL;
    st = eisnn_raster_latency_encode(pixels, 16, 20, 1.0, &raster);
    assert(st == EISNN_STATUS_OK);
    size_t cls = 99;
    st = eisnn_classify(net, raster, &cls);
    assert(st == EISNN_STATUS_OK && cls < 3);
    double d = -1;
    double a[1] = {3.0};
    st = eisnn_van_rossum(a, 1, NULL, 0, 1.0, &d);
    assert(st == EISNN_STATUS_OK);
    printf("class=%zu vr=%.10f\n", cls, d);
    eisnn_raster_free(raster);
    eisnn_network_free(net);
    return 0;
}
