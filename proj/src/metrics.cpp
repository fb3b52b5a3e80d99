#include "bnfk/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bnfk/model.hpp"

namespace bnfk {

double accuracy(const std::vector<int>& preds, const std::vector<int>& truth) {
    if (preds.empty() || preds.size() != truth.size())
        throw std::invalid_argument("accuracy: empty or mismatched inputs");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == truth[i]) ++hits;
    return (double)hits / (double)preds.size();
}

double auc(const std::vector<double>& scores, const std::vector<int>& truth) {
    if (scores.size() != truth.size() || scores.empty())
        throw std::invalid_argument("auc: empty or mismatched inputs");
    std::size_t npos = 0, nneg = 0;
    for (int t : truth) (t ? npos : nneg)++;
    if (npos == 0 || nneg == 0)
        throw std::invalid_argument("auc: undefined with a single class");

    // Mann-Whitney via average ranks; ties contribute 1/2
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * (double)(i + 1 + j);  // ranks are 1-based
        for (std::size_t k = i; k < j; ++k)
            if (truth[idx[k]]) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - (double)npos * ((double)npos + 1.0) / 2.0;
    return u / ((double)npos * (double)nneg);
}

EvalReport make_report(const std::vector<double>& scores, const std::vector<int>& truth,
                       double threshold) {
    EvalReport rep;
    std::vector<int> preds(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        preds[i] = scores[i] >= threshold ? 1 : 0;
        if (preds[i] && truth[i]) rep.tp++;
        else if (preds[i] && !truth[i]) rep.fp++;
        else if (!preds[i] && truth[i]) rep.fn++;
        else rep.tn++;
    }
    rep.accuracy = accuracy(preds, truth);
    rep.auc = auc(scores, truth);
    return rep;
}

std::string EvalReport::to_json() const {
    std::ostringstream os;
    os.precision(17);
    os << "{\"tp\":" << tp << ",\"tn\":" << tn << ",\"fp\":" << fp << ",\"fn\":" << fn
       << ",\"accuracy\":" << accuracy << ",\"auc\":" << auc << ",\"flops\":" << ops.flops
       << ",\"bops\":" << ops.bops << ",\"effective_flops\":" << ops.effective_flops
       << ",\"param_bytes\":" << ops.param_bytes << "}";
    return os.str();
}

namespace {

std::vector<LayerOps> layer_ops(const ModelSpec& spec, bool binary_as_binary) {
    spec.validate();
    std::vector<LayerOps> layers;
    std::size_t h = spec.input_h, w = spec.input_w;

    {
        LayerOps l;
        l.name = "adapter";
        long long macs = (long long)(2 * spec.in_channels * 3) * (long long)(h * w);
        l.counts.flops = macs;
        l.counts.param_bytes = (long long)(spec.in_channels * 3 + 3) * 4;
        layers.push_back(l);
    }
    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
        const ConvSpec& c = spec.blocks[i].conv;
        const std::size_t ho = c.out_h(h), wo = c.out_w(w);
        LayerOps l;
        l.name = "block" + std::to_string(i) + ".conv";
        const long long ops2 = 2LL * (long long)(c.in_channels * c.kernel_h * c.kernel_w) *
                               (long long)(ho * wo) * (long long)c.out_channels;
        const long long n_weights =
            (long long)(c.out_channels * c.in_channels * c.kernel_h * c.kernel_w);
        if (binary_as_binary) {
            l.counts.bops = ops2;
            l.counts.flops = (long long)(ho * wo * c.out_channels);  // alpha multiply
            l.counts.param_bytes =
                (long long)c.out_channels *
                    (long long)(((c.in_channels * c.kernel_h * c.kernel_w + 63) / 64) * 8) +
                (long long)c.out_channels * 8;  // packed bits + alpha (f64)
        } else {
            l.counts.flops = ops2;
            l.counts.param_bytes = n_weights * 4;
        }
        layers.push_back(l);
        if (spec.blocks[i].needs_projection()) {
            LayerOps p;
            p.name = "block" + std::to_string(i) + ".proj";
            p.counts.flops = 2LL * (long long)(c.in_channels * c.out_channels) *
                             (long long)(ho * wo);
            p.counts.param_bytes = (long long)(c.in_channels * c.out_channels) * 4;
            layers.push_back(p);
        }
        LayerOps a;
        a.name = "block" + std::to_string(i) + ".affine";
        a.counts.flops = 2LL * (long long)(ho * wo * c.out_channels);
        a.counts.param_bytes = (long long)c.out_channels * 2 * 4;
        layers.push_back(a);
        h = ho;
        w = wo;
    }
    {
        LayerOps l;
        l.name = "head";
        l.counts.flops = 2LL * (long long)spec.feature_dim();
        l.counts.param_bytes = (long long)(spec.feature_dim() + 1) * 4;
        layers.push_back(l);
    }
    for (LayerOps& l : layers)
        l.counts.effective_flops = (double)l.counts.flops + (double)l.counts.bops / 64.0;
    return layers;
}

OpCounts total(const std::vector<LayerOps>& layers) {
    OpCounts t;
    for (const LayerOps& l : layers) {
        t.flops += l.counts.flops;
        t.bops += l.counts.bops;
        t.param_bytes += l.counts.param_bytes;
    }
    t.effective_flops = (double)t.flops + (double)t.bops / 64.0;
    return t;
}

}  // namespace

std::vector<LayerOps> count_ops_per_layer(const ModelSpec& spec) {
    return layer_ops(spec, true);
}

OpCounts count_ops(const ModelSpec& spec) { return total(layer_ops(spec, true)); }

OpCounts count_ops_full_precision(const ModelSpec& spec) {
    return total(layer_ops(spec, false));
}

}  // namespace bnfk
