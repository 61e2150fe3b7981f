#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdsm/binio.hpp"
#include "gdsm/errors.hpp"
#include "gdsm/extract.hpp"
#include "gdsm/nn/layers.hpp"
#include "gdsm/rng.hpp"

namespace gdsm::nn {

// All global-stream slices are zero-padded (centered) to one square input so
// a single backbone can serve the three plane shapes; 109 is the largest
// 2 mm dimension.
inline constexpr int kGlobalInputSize = 109;

enum class StreamKind : int {
    local_axial = 0,
    local_coronal = 1,
    local_sagittal = 2,
    global = 3,
    correction = 4,
};

inline const char* stream_kind_name(StreamKind s) {
    switch (s) {
        case StreamKind::local_axial: return "local_axial";
        case StreamKind::local_coronal: return "local_coronal";
        case StreamKind::local_sagittal: return "local_sagittal";
        case StreamKind::global: return "global";
        default: return "correction";
    }
}

inline StreamKind stream_kind_from_name(const std::string& name) {
    for (int i = 0; i <= 4; ++i)
        if (name == stream_kind_name(static_cast<StreamKind>(i))) return static_cast<StreamKind>(i);
    throw FormatError("unknown stream kind: " + name);
}

inline bool is_local(StreamKind s) {
    return s == StreamKind::local_axial || s == StreamKind::local_coronal ||
           s == StreamKind::local_sagittal;
}

inline StreamKind local_stream_for(Plane p) {
    switch (p) {
        case Plane::axial: return StreamKind::local_axial;
        case Plane::coronal: return StreamKind::local_coronal;
        default: return StreamKind::local_sagittal;
    }
}

// Auxiliary input width per stream: local = gender + slice + patch-type
// one-hot(4); global = gender + slice + plane one-hot(3); correction = the
// C1-long age vector.
inline constexpr int kLocalAuxWidth = 6;
inline constexpr int kGlobalAuxWidth = 5;

struct BackboneSpec {
    std::string name = "tiny";
    int input_h = kPatchSize;
    int input_w = kPatchSize;
    std::vector<int> widths{8, 16, 32};
    int trainable_layer_count = 3;
    std::string warm_start;
};

struct HeadSpec {
    std::vector<int> hidden{64, 32, 16};  // Table 4: 64:32:16 then linear 1
    int aux_width = 0;
};

template <typename S>
struct PathwayWorkspace {
    std::vector<Tensor3<S>> acts;       // acts[0] = input, then post-ReLU conv outputs
    std::vector<std::vector<S>> cols;   // im2col scratch per conv
    std::vector<S> feat;                // pooled feature vector
    std::vector<std::vector<S>> fc_x;   // dense inputs (fc_x[0] = features ++ aux)
    std::vector<std::vector<S>> fc_y;   // dense outputs (post-ReLU except last)
    // backward scratch
    Tensor3<S> dact, dact_prev;
    std::vector<S> dcol;
    std::vector<std::vector<S>> dvec;
};

// One prediction pathway: tiny conv backbone -> global average pooling ->
// fully connected head over [features, aux]. Parameters live in a fixed
// flat order (convs then dense layers) shared by the optimizer, the
// serializer and the finite-difference checks.
template <typename S>
class PathwayModel {
public:
    StreamKind stream = StreamKind::global;
    BackboneSpec backbone_spec;
    HeadSpec head_spec;
    std::vector<Conv2D<S>> convs;
    std::vector<Dense<S>> fcs;
    int feature_dim = 0;
    std::uint64_t init_seed = 0;
    bool trained = false;
    int frozen_conv_layers = 0;  // leading conv layers excluded from updates

    int aux_width() const { return head_spec.aux_width; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& c : convs) n += c.param_count();
        for (const auto& f : fcs) n += f.param_count();
        return n;
    }

    std::size_t head_param_offset() const {
        std::size_t n = 0;
        for (const auto& c : convs) n += c.param_count();
        return n;
    }

    void get_params(std::vector<S>& out) const {
        out.clear();
        out.reserve(param_count());
        for (const auto& c : convs) {
            out.insert(out.end(), c.w.begin(), c.w.end());
            out.insert(out.end(), c.b.begin(), c.b.end());
        }
        for (const auto& f : fcs) {
            out.insert(out.end(), f.w.begin(), f.w.end());
            out.insert(out.end(), f.b.begin(), f.b.end());
        }
    }

    void set_params(std::span<const S> params) {
        if (params.size() != param_count())
            throw ShapeMismatch("parameter vector has wrong length");
        std::size_t off = 0;
        auto take = [&](std::vector<S>& dst) {
            std::copy(params.begin() + off, params.begin() + off + dst.size(), dst.begin());
            off += dst.size();
        };
        for (auto& c : convs) {
            take(c.w);
            take(c.b);
        }
        for (auto& f : fcs) {
            take(f.w);
            take(f.b);
        }
    }

    // Per-parameter update mask honoring frozen_conv_layers.
    std::vector<std::uint8_t> frozen_mask() const {
        std::vector<std::uint8_t> mask(param_count(), 0);
        std::size_t off = 0;
        for (int i = 0; i < static_cast<int>(convs.size()); ++i) {
            const std::size_t n = convs[i].param_count();
            if (i < frozen_conv_layers) std::fill_n(mask.begin() + off, n, std::uint8_t(1));
            off += n;
        }
        return mask;
    }

    S forward(PathwayWorkspace<S>& ws, const Tensor3<S>& input, std::span<const S> aux) const {
        if (input.c != 1 || input.h != backbone_spec.input_h || input.w != backbone_spec.input_w)
            throw ShapeMismatch("pathway input has wrong shape");
        if (static_cast<int>(aux.size()) != head_spec.aux_width)
            throw ShapeMismatch("aux vector has wrong width");

        ws.acts.resize(convs.size() + 1);
        ws.cols.resize(convs.size());
        ws.acts[0] = input;
        for (std::size_t i = 0; i < convs.size(); ++i) {
            convs[i].forward(ws.acts[i], ws.cols[i], ws.acts[i + 1]);
            relu_inplace(ws.acts[i + 1].v);
        }

        const Tensor3<S>& last = ws.acts.back();
        const S inv_n = S(1) / static_cast<S>(last.h * last.w);
        ws.feat.assign(static_cast<std::size_t>(last.c), S(0));
        for (int c = 0; c < last.c; ++c) {
            S acc = S(0);
            const S* plane = &last.v[static_cast<std::size_t>(c) * last.h * last.w];
            for (int i = 0; i < last.h * last.w; ++i) acc += plane[i];
            ws.feat[c] = acc * inv_n;
        }

        ws.fc_x.resize(fcs.size());
        ws.fc_y.resize(fcs.size());
        ws.fc_x[0] = ws.feat;
        ws.fc_x[0].insert(ws.fc_x[0].end(), aux.begin(), aux.end());
        for (std::size_t i = 0; i < fcs.size(); ++i) {
            if (i > 0) ws.fc_x[i] = ws.fc_y[i - 1];
            fcs[i].forward(ws.fc_x[i], ws.fc_y[i]);
            if (i + 1 < fcs.size()) relu_inplace(ws.fc_y[i]);
        }
        return ws.fc_y.back()[0];
    }

    // Accumulates d(loss)/d(params) into grad for d(loss)/d(pred) = dpred.
    // Must follow a forward() on the same workspace.
    void backward(PathwayWorkspace<S>& ws, S dpred, std::span<S> grad) const {
        ws.dvec.resize(fcs.size() + 1);
        ws.dvec[fcs.size()] = {dpred};

        std::size_t off = param_count();
        for (int i = static_cast<int>(fcs.size()) - 1; i >= 0; --i) {
            off -= fcs[i].param_count();
            auto dw = grad.subspan(off, fcs[i].w.size());
            auto db = grad.subspan(off + fcs[i].w.size(), fcs[i].b.size());
            fcs[i].backward(ws.fc_x[i], ws.dvec[i + 1], dw, db, ws.dvec[i]);
            if (i > 0) relu_backward_inplace(ws.dvec[i], ws.fc_y[i - 1]);
        }

        const Tensor3<S>& last = ws.acts.back();
        const S inv_n = S(1) / static_cast<S>(last.h * last.w);
        ws.dact = Tensor3<S>(last.c, last.h, last.w);
        for (int c = 0; c < last.c; ++c) {
            const S g = ws.dvec[0][static_cast<std::size_t>(c)] * inv_n;
            S* plane = &ws.dact.v[static_cast<std::size_t>(c) * last.h * last.w];
            for (int i = 0; i < last.h * last.w; ++i) plane[i] = g;
        }

        for (int i = static_cast<int>(convs.size()) - 1; i >= 0; --i) {
            relu_backward_inplace(ws.dact.v, ws.acts[i + 1].v);
            off -= convs[i].param_count();
            auto dw = grad.subspan(off, convs[i].w.size());
            auto db = grad.subspan(off + convs[i].w.size(), convs[i].b.size());
            convs[i].backward(ws.acts[i], ws.cols[i], ws.dact, dw, db, ws.dact_prev, ws.dcol);
            std::swap(ws.dact, ws.dact_prev);
        }
    }
};

// ---------------------------------------------------------------------------
// Input and aux assembly from extracted patches.
// ---------------------------------------------------------------------------

// Local patches must arrive at the backbone's exact 80x80 shape; global and
// correction inputs are zero-padded (centered) up to the backbone shape.
template <typename S>
Tensor3<S> make_input(StreamKind kind, const Image2D& image, int input_h, int input_w) {
    if (is_local(kind) && (image.rows != input_h || image.cols != input_w))
        throw ShapeMismatch("local patch shape does not match the backbone input");
    if (image.rows > input_h || image.cols > input_w)
        throw ShapeMismatch("slice larger than backbone input");
    Tensor3<S> t(1, input_h, input_w);
    const int r0 = (input_h - image.rows) / 2;
    const int c0 = (input_w - image.cols) / 2;
    for (int r = 0; r < image.rows; ++r)
        for (int c = 0; c < image.cols; ++c)
            t.at(0, r0 + r, c0 + c) = static_cast<S>(image.at(r, c));
    return t;
}

// Slice index normalized by (axis length - 1) of the stream's resolution.
inline double normalized_slice_index(Stream stream, Plane plane, int slice_index) {
    const Dims& dims = stream == Stream::local ? kDims1mm : kDims2mm;
    const int len = axis_length(dims, plane);
    return len > 1 ? static_cast<double>(slice_index) / (len - 1) : 0.0;
}

template <typename S>
std::vector<S> make_aux(StreamKind kind, const ExtractedPatch& patch,
                        std::span<const double> age_vector = {}) {
    std::vector<S> aux;
    if (is_local(kind)) {
        if (patch.stream != Stream::local || local_stream_for(patch.plane) != kind)
            throw ShapeMismatch("patch does not belong to this local pathway");
        aux.reserve(kLocalAuxWidth);
        aux.push_back(static_cast<S>(patch.gender == Gender::male ? 1 : 0));
        aux.push_back(static_cast<S>(normalized_slice_index(patch.stream, patch.plane, patch.slice_index)));
        for (int i = 0; i < 4; ++i) aux.push_back(patch.encoded_label == i ? S(1) : S(0));
        return aux;
    }
    if (patch.stream != Stream::global) throw ShapeMismatch("patch does not belong to the global stream");
    if (kind == StreamKind::global) {
        aux.reserve(kGlobalAuxWidth);
        aux.push_back(static_cast<S>(patch.gender == Gender::male ? 1 : 0));
        aux.push_back(static_cast<S>(normalized_slice_index(patch.stream, patch.plane, patch.slice_index)));
        for (int i = 0; i < 3; ++i) aux.push_back(static_cast<int>(patch.plane) == i ? S(1) : S(0));
        return aux;
    }
    // correction: the aux input is the age vector alone.
    aux.reserve(age_vector.size());
    for (double a : age_vector) aux.push_back(static_cast<S>(a));
    return aux;
}

// ---------------------------------------------------------------------------
// Construction, prediction, serialization.
// ---------------------------------------------------------------------------

template <typename S>
void seeded_init(PathwayModel<S>& model, std::uint64_t seed) {
    // Uniform fan-in scheme: U(-sqrt(1/fan_in), sqrt(1/fan_in)), zero biases.
    Rng rng(hash_combine(seed, 0x1417ull));
    auto fill = [&](std::vector<S>& w, int fan_in) {
        const double bound = std::sqrt(1.0 / fan_in);
        for (S& x : w) x = static_cast<S>(rng.uniform(-bound, bound));
    };
    for (auto& c : model.convs) fill(c.w, c.fan_in());
    for (auto& f : model.fcs) fill(f.w, f.fan_in());
    model.init_seed = seed;
}

template <typename S>
void save_pathway(const PathwayModel<S>& model, const std::string& dir,
                  const std::string& archive_config_hash = "");
template <typename S>
PathwayModel<S> load_pathway(const std::string& dir, std::string* archive_config_hash = nullptr);

template <typename S>
PathwayModel<S> build_pathway(StreamKind stream, const BackboneSpec& bspec, const HeadSpec& hspec,
                              std::uint64_t seed = 0) {
    if (bspec.name != "tiny")
        throw ShapeMismatch("unknown backbone '" + bspec.name + "' (this build ships \"tiny\")");
    PathwayModel<S> model;
    model.stream = stream;
    model.backbone_spec = bspec;
    model.head_spec = hspec;

    if (is_local(stream) && (bspec.input_h != kPatchSize || bspec.input_w != kPatchSize))
        throw ShapeMismatch("local pathways take 80x80 patches");
    if (bspec.input_h < 4 || bspec.input_w < 4)
        throw ShapeMismatch("backbone input too small");

    if (is_local(stream))
        model.head_spec.aux_width = kLocalAuxWidth;
    else if (stream == StreamKind::global)
        model.head_spec.aux_width = kGlobalAuxWidth;
    else if (model.head_spec.aux_width < 1)
        throw ShapeMismatch("correction pathway needs aux_width >= 1 (the C1 age vector)");

    int cin = 1;
    int side_h = bspec.input_h, side_w = bspec.input_w;
    for (int width : bspec.widths) {
        Conv2D<S> conv;
        conv.init_shape(cin, width, 3, 2, 1);
        side_h = conv.out_dim(side_h);
        side_w = conv.out_dim(side_w);
        cin = width;
        model.convs.push_back(std::move(conv));
    }
    if (side_h < 1 || side_w < 1) throw ShapeMismatch("backbone reduces input below 1x1");
    model.feature_dim = cin;

    int in = model.feature_dim + model.head_spec.aux_width;
    for (int width : model.head_spec.hidden) {
        Dense<S> fc;
        fc.init_shape(in, width);
        in = width;
        model.fcs.push_back(std::move(fc));
    }
    Dense<S> out_layer;
    out_layer.init_shape(in, 1);
    model.fcs.push_back(std::move(out_layer));

    seeded_init(model, seed);

    if (!bspec.warm_start.empty()) {
        PathwayModel<S> source = load_pathway<S>(bspec.warm_start);
        if (source.convs.size() != model.convs.size())
            throw ShapeMismatch("warm_start backbone depth mismatch");
        for (std::size_t i = 0; i < model.convs.size(); ++i) {
            if (source.convs[i].w.size() != model.convs[i].w.size())
                throw ShapeMismatch("warm_start backbone width mismatch");
            model.convs[i].w = source.convs[i].w;
            model.convs[i].b = source.convs[i].b;
        }
    }
    return model;
}

// Evaluation-mode prediction: pure, deterministic, finite.
template <typename S>
double predict(const PathwayModel<S>& model, const ExtractedPatch& patch,
               std::span<const double> age_vector = {}) {
    PathwayWorkspace<S> ws;
    const Tensor3<S> input = make_input<S>(model.stream, patch.image, model.backbone_spec.input_h,
                                           model.backbone_spec.input_w);
    const std::vector<S> aux = make_aux<S>(model.stream, patch, age_vector);
    const S y = model.forward(ws, input, aux);
    if (!std::isfinite(static_cast<double>(y)))
        throw NonFiniteOutput("pathway produced a non-finite age (diverged weights?)");
    return static_cast<double>(y);
}

// Age-correction constructor: deep-copies the trained global backbone,
// freezes all but the last tail_trainable conv layers, and attaches a fresh
// head whose aux input is the C1-long age vector.
template <typename S>
PathwayModel<S> build_correction_model(const PathwayModel<S>& trained_global, int c1,
                                       int tail_trainable, std::uint64_t seed = 0) {
    if (trained_global.stream != StreamKind::global)
        throw UntrainedSource("correction model must be built from the global pathway");
    if (!trained_global.trained)
        throw UntrainedSource("correction model requires a trained global pathway");
    if (c1 < 1) throw InvalidParams("c1 must be >= 1");
    if (tail_trainable < 0) throw InvalidParams("tail_trainable must be >= 0");

    BackboneSpec bspec = trained_global.backbone_spec;
    bspec.warm_start.clear();
    HeadSpec hspec = trained_global.head_spec;
    hspec.aux_width = c1;

    PathwayModel<S> model = build_pathway<S>(StreamKind::correction, bspec, hspec, seed);
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        model.convs[i].w = trained_global.convs[i].w;
        model.convs[i].b = trained_global.convs[i].b;
    }
    const int n_convs = static_cast<int>(model.convs.size());
    model.frozen_conv_layers = std::max(0, n_convs - tail_trainable);
    return model;
}

// ---------------------------------------------------------------------------
// Checkpoint files: spec.json (architecture + provenance) and model.bin
// (flat parameter vector).
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr char kNetMagic[8] = {'G', 'D', 'S', 'M', 'N', 'E', 'T', '1'};
}

template <typename S>
void save_pathway(const PathwayModel<S>& model, const std::string& dir,
                  const std::string& archive_config_hash) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);

    nlohmann::json spec;
    spec["stream"] = stream_kind_name(model.stream);
    spec["backbone"] = {{"name", model.backbone_spec.name},
                        {"input", {model.backbone_spec.input_h, model.backbone_spec.input_w}},
                        {"widths", model.backbone_spec.widths},
                        {"trainable_layer_count", model.backbone_spec.trainable_layer_count},
                        {"warm_start", model.backbone_spec.warm_start}};
    spec["head"] = {{"hidden", model.head_spec.hidden}, {"aux_width", model.head_spec.aux_width}};
    spec["feature_dim"] = model.feature_dim;
    spec["init"] = {{"scheme", "uniform_fan_in"}, {"seed", model.init_seed}};
    spec["trained"] = model.trained;
    spec["frozen_conv_layers"] = model.frozen_conv_layers;
    spec["scalar"] = sizeof(S) == 4 ? "f32" : "f64";
    if (!archive_config_hash.empty()) spec["archive_config_hash"] = archive_config_hash;
    {
        std::ofstream out(fs::path(dir) / "spec.json", std::ios::trunc);
        if (!out) throw IoError("cannot write model spec in " + dir);
        out << spec.dump(2) << "\n";
    }

    std::vector<S> params;
    model.get_params(params);
    std::string bytes;
    bytes.append(detail::kNetMagic, sizeof(detail::kNetMagic));
    bytes.push_back(static_cast<char>(sizeof(S)));
    gdsm::detail::put_le<std::uint64_t>(bytes, params.size());
    bytes.append(reinterpret_cast<const char*>(params.data()), params.size() * sizeof(S));
    std::ofstream out(fs::path(dir) / "model.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write model weights in " + dir);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for model weights in " + dir);
}

template <typename S>
PathwayModel<S> load_pathway(const std::string& dir, std::string* archive_config_hash) {
    namespace fs = std::filesystem;
    const fs::path spec_path = fs::path(dir) / "spec.json";
    std::ifstream in(spec_path);
    if (!in) throw FileMissing("no model checkpoint at " + dir);
    nlohmann::json spec;
    try {
        in >> spec;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("model spec " + spec_path.string() + ": " + e.what());
    }

    BackboneSpec bspec;
    bspec.name = spec["backbone"]["name"].get<std::string>();
    bspec.input_h = spec["backbone"]["input"][0].get<int>();
    bspec.input_w = spec["backbone"]["input"][1].get<int>();
    bspec.widths = spec["backbone"]["widths"].get<std::vector<int>>();
    bspec.trainable_layer_count = spec["backbone"].value("trainable_layer_count", 3);
    HeadSpec hspec;
    hspec.hidden = spec["head"]["hidden"].get<std::vector<int>>();
    hspec.aux_width = spec["head"]["aux_width"].get<int>();

    PathwayModel<S> model = build_pathway<S>(stream_kind_from_name(spec["stream"].get<std::string>()),
                                             bspec, hspec, spec["init"]["seed"].get<std::uint64_t>());
    model.trained = spec.value("trained", false);
    model.frozen_conv_layers = spec.value("frozen_conv_layers", 0);
    if (archive_config_hash) *archive_config_hash = spec.value("archive_config_hash", "");

    std::ifstream binf(fs::path(dir) / "model.bin", std::ios::binary);
    if (!binf) throw FileMissing("missing model.bin in " + dir);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(binf)), std::istreambuf_iterator<char>());
    if (bytes.size() < 17 || std::memcmp(bytes.data(), detail::kNetMagic, 8) != 0)
        throw FormatError("bad model.bin in " + dir);
    const int scalar_bytes = bytes[8];
    const std::uint64_t n = gdsm::detail::get_le<std::uint64_t>(bytes.data() + 9);
    if (n != model.param_count()) throw FormatError("parameter count mismatch in " + dir);
    if (bytes.size() != 17 + n * static_cast<std::size_t>(scalar_bytes))
        throw FormatError("truncated model.bin in " + dir);

    std::vector<S> params(n);
    if (scalar_bytes == static_cast<int>(sizeof(S))) {
        std::memcpy(params.data(), bytes.data() + 17, n * sizeof(S));
    } else if (scalar_bytes == 4) {
        for (std::uint64_t i = 0; i < n; ++i)
            params[i] = static_cast<S>(gdsm::detail::get_le<float>(bytes.data() + 17 + i * 4));
    } else if (scalar_bytes == 8) {
        for (std::uint64_t i = 0; i < n; ++i)
            params[i] = static_cast<S>(gdsm::detail::get_le<double>(bytes.data() + 17 + i * 8));
    } else {
        throw FormatError("unsupported scalar width in " + dir);
    }
    model.set_params(params);
    return model;
}

// FNV hash of a parameter range; handy for frozen-slice comparisons.
template <typename S>
std::uint64_t param_hash(const PathwayModel<S>& model, std::size_t begin = 0,
                         std::size_t end = SIZE_MAX) {
    std::vector<S> params;
    model.get_params(params);
    end = std::min(end, params.size());
    begin = std::min(begin, end);
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(params.data() + begin),
                                    (end - begin) * sizeof(S)));
}

}  // namespace gdsm::nn
