// Tracks the ED->ES pair of a default phantom and compares the tracker with
// the two baselines.

#include <cstdio>

#include "mvmotion/mvmotion.hpp"

using namespace mvmotion;

int main() {
    PhantomConfig pc;
    const PhantomStudy st = generate(pc);
    const int es = st.es_index;
    const auto myo_es = label_mask(st.labels[es], labels::myocardium);

    auto report = [&](const char *name, const DisplacementField &f) {
        const LabelVolume w = warp_labels(st.labels[0], f);
        const auto epe = end_point_error(f, st.gt_fields[es], myo_es);
        std::printf("%-8s dice %.3f  hd %5.2f mm  vd %5.2f%%  epe %.2f mm\n", name,
                    dice(w, st.labels[es], labels::myocardium).value, hausdorff_mm(w, st.labels[es], labels::myocardium),
                    volume_difference(st.labels[0], w, labels::myocardium), epe.mean_mm);
    };

    TrackerConfig tc;
    report("tracker", track_pair(make_frame_context(st, es, tc), tc).field);
    report("demons", register_demons(st.images[es], st.images[0]));
    report("ffd", register_ffd(st.images[es], st.images[0]));
    report("none", DisplacementField(pc.dims, pc.spacing));
}
