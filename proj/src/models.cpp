#include "llp/models.hpp"

#include <cmath>

#include "llp/bytes.hpp"
#include "llp/rng.hpp"

namespace llp {

namespace {

// softplus(x) = 1  at  x = ln(e - 1)
const double kBandwidthRawForGammaOne = std::log(std::exp(1.0) - 1.0);

template <class T>
Tensor<T> uniform_fan(Shape shape, int64_t fan_in, int64_t fan_out, SplitMix64& rng) {
  Tensor<T> t(std::move(shape));
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  T* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(rng.symmetric(s));
  return t;
}

template <class T>
void require_image(const Tensor<T>& image) {
  if (image.rank() != 3 || image.dim(0) != kChipSide || image.dim(1) != kChipSide ||
      image.dim(2) != 3)
    throw ShapeError("model input must be [100,100,3], got " + shape_str(image.shape()));
}

}  // namespace

const char* model_kind_name(ModelKind kind) {
  return kind == ModelKind::Downconv ? "downconv" : "qkm";
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "downconv") return ModelKind::Downconv;
  if (name == "qkm") return ModelKind::Qkm;
  throw ValueError("unknown model kind \"" + name + "\" (expected downconv or qkm)");
}

int64_t param_count(ModelKind kind, int hyper, int n_classes) {
  if (hyper < 1 || n_classes < 1)
    throw ValueError("param_count: hyperparameters must be positive");
  const int64_t h = hyper, n = n_classes;
  switch (kind) {
    case ModelKind::Downconv:
      return (4 * 4 * 3 + 1) * h + (h + 1) * n;
    case ModelKind::Qkm:
      return h * (kPatchDim + n + 1) + 1;
  }
  throw ValueError("param_count: unknown model kind");
}

template <class T>
Tensor<T> extract_patches(const Tensor<T>& image) {
  require_image(image);
  const int side = (kChipSide + 2 * kPatchPad - kPatchSide) / kPatchStride + 1;  // 50
  Tensor<T> out({static_cast<int64_t>(side) * side, kPatchDim});
  const T* in = image.data();
  T* q = out.data();
  for (int gy = 0; gy < side; ++gy) {
    for (int gx = 0; gx < side; ++gx) {
      T* row = q + (static_cast<int64_t>(gy) * side + gx) * kPatchDim;
      const int iy0 = gy * kPatchStride - kPatchPad;
      const int ix0 = gx * kPatchStride - kPatchPad;
      for (int pi = 0; pi < kPatchSide; ++pi) {
        const int iy = iy0 + pi;
        for (int pj = 0; pj < kPatchSide; ++pj) {
          const int ix = ix0 + pj;
          T* dst = row + (pi * kPatchSide + pj) * 3;
          if (iy < 0 || iy >= kChipSide || ix < 0 || ix >= kChipSide) {
            dst[0] = dst[1] = dst[2] = T(0);
          } else {
            const T* src = in + (static_cast<int64_t>(iy) * kChipSide + ix) * 3;
            dst[0] = src[0];
            dst[1] = src[1];
            dst[2] = src[2];
          }
        }
      }
    }
  }
  return out;
}

template <class T>
ChipPrediction<T> downconv_forward(const Tensor<T>& image, const DownconvParams<T>& p) {
  require_image(image);
  Tensor<T> a1 = kernels::conv2d(image, p.conv1_kernels, p.conv1_bias, 4, 0);
  Tensor<T> r1 = kernels::relu(a1);
  Tensor<T> a2 = kernels::conv2d(r1, p.conv2_kernels, p.conv2_bias, 1, 0);
  Tensor<T> probs = kernels::softmax_channels(a2);
  Tensor<T> props = kernels::reduce_mean_cells(probs);
  return {std::move(probs), std::move(props)};
}

template <class T>
ChipPrediction<T> qkm_forward(const Tensor<T>& image, const QkmParams<T>& p) {
  Tensor<T> patches = extract_patches(image);
  Tensor<T> xn = kernels::row_unit_normalize(patches, static_cast<T>(kNormEps));
  Tensor<T> wn = kernels::row_unit_normalize(p.prototypes, static_cast<T>(kNormEps));
  Tensor<T> sim = kernels::matmul(xn, wn, false, true);  // [2500,m]
  Tensor<T> gamma = kernels::softplus(p.bandwidth_raw);
  Tensor<T> k =
      kernels::exp(kernels::scalar_mul(gamma, kernels::affine(kernels::square(sim), T(1), T(-1))));
  Tensor<T> alpha = kernels::softmax_channels(p.mixture_logits);
  Tensor<T> pi = kernels::softmax_channels(p.class_logits);
  Tensor<T> weighted = kernels::colscale(k, alpha);
  Tensor<T> numer = kernels::matmul(weighted, pi);
  Tensor<T> denom = kernels::rowsum(weighted);
  Tensor<T> cond = kernels::rowdiv(numer, denom);  // [2500,n]
  Tensor<T> props = kernels::reduce_mean_cells(cond);
  const int64_t n = pi.dim(1);
  return {cond.reshaped({50, 50, n}), std::move(props)};
}

template <class T>
int Model<T>::classes() const {
  return kind() == ModelKind::Downconv ? downconv().classes() : qkm().classes();
}

template <class T>
int Model<T>::hyper() const {
  return kind() == ModelKind::Downconv ? downconv().filters() : qkm().components();
}

template <class T>
std::vector<Tensor<T>*> Model<T>::blocks() {
  if (auto* d = std::get_if<DownconvParams<T>>(&params_))
    return {&d->conv1_kernels, &d->conv1_bias, &d->conv2_kernels, &d->conv2_bias};
  auto& q = std::get<QkmParams<T>>(params_);
  return {&q.prototypes, &q.class_logits, &q.mixture_logits, &q.bandwidth_raw};
}

template <class T>
std::vector<const Tensor<T>*> Model<T>::blocks() const {
  auto mutable_blocks = const_cast<Model<T>*>(this)->blocks();
  return {mutable_blocks.begin(), mutable_blocks.end()};
}

template <class T>
ChipPrediction<T> Model<T>::forward(const Tensor<T>& image) const {
  if (kind() == ModelKind::Downconv) return downconv_forward(image, downconv());
  return qkm_forward(image, qkm());
}

template <class T>
typename Tape<T>::Id Model<T>::tape_proportions(Tape<T>& tape, Tensor<T> image,
                                                std::vector<typename Tape<T>::Id>& block_ids)
    const {
  block_ids.clear();
  for (const Tensor<T>* b : blocks()) block_ids.push_back(tape.leaf(*b, true));
  if (kind() == ModelKind::Downconv) {
    require_image(image);
    auto img = tape.constant(std::move(image));
    auto a1 = tape.conv2d(img, block_ids[0], block_ids[1], 4, 0);
    auto r1 = tape.relu(a1);
    auto a2 = tape.conv2d(r1, block_ids[2], block_ids[3], 1, 0);
    auto probs = tape.softmax_channels(a2);
    return tape.reduce_mean_cells(probs);
  }
  auto patches = tape.constant(extract_patches(image));
  auto xn = tape.row_unit_normalize(patches, static_cast<T>(kNormEps));
  auto wn = tape.row_unit_normalize(block_ids[0], static_cast<T>(kNormEps));
  auto sim = tape.matmul(xn, wn, false, true);
  auto gamma = tape.softplus(block_ids[3]);
  auto k = tape.exp(tape.scalar_mul(gamma, tape.affine(tape.square(sim), T(1), T(-1))));
  auto alpha = tape.softmax_channels(block_ids[2]);
  auto pi = tape.softmax_channels(block_ids[1]);
  auto weighted = tape.colscale(k, alpha);
  auto numer = tape.matmul(weighted, pi);
  auto denom = tape.rowsum(weighted);
  auto cond = tape.rowdiv(numer, denom);
  return tape.reduce_mean_cells(cond);
}

template <class T>
template <class U>
Model<U> Model<T>::cast() const {
  auto convert = [](const Tensor<T>& t) {
    Tensor<U> out(t.shape());
    const T* p = t.data();
    U* q = out.data();
    for (int64_t i = 0; i < t.numel(); ++i) q[i] = static_cast<U>(p[i]);
    return out;
  };
  if (kind() == ModelKind::Downconv) {
    const auto& d = downconv();
    return Model<U>(DownconvParams<U>{convert(d.conv1_kernels), convert(d.conv1_bias),
                                      convert(d.conv2_kernels), convert(d.conv2_bias)});
  }
  const auto& q = qkm();
  return Model<U>(QkmParams<U>{convert(q.prototypes), convert(q.class_logits),
                               convert(q.mixture_logits), convert(q.bandwidth_raw)});
}

template <class T>
Model<T> Model<T>::clone() const {
  return cast<T>();
}

template <class T>
Model<T> init_model(ModelKind kind, int hyper, int n_classes, uint64_t seed) {
  if (hyper < 1 || n_classes < 1)
    throw ValueError("init_model: hyperparameters must be positive");
  SplitMix64 rng(seed);
  if (kind == ModelKind::Downconv) {
    const int64_t f = hyper, n = n_classes;
    DownconvParams<T> p;
    p.conv1_kernels = uniform_fan<T>({4, 4, 3, f}, 4 * 4 * 3, 4 * 4 * f, rng);
    p.conv1_bias = Tensor<T>::zeros({f});
    p.conv2_kernels = uniform_fan<T>({1, 1, f, n}, f, n, rng);
    p.conv2_bias = Tensor<T>::zeros({n});
    return Model<T>(std::move(p));
  }
  const int64_t m = hyper, n = n_classes;
  QkmParams<T> p;
  p.prototypes = uniform_fan<T>({m, kPatchDim}, kPatchDim, m, rng);
  p.class_logits = Tensor<T>::zeros({m, n});
  p.mixture_logits = Tensor<T>::zeros({m});
  p.bandwidth_raw = Tensor<T>::scalar(static_cast<T>(kBandwidthRawForGammaOne));
  return Model<T>(std::move(p));
}

std::vector<uint8_t> model_to_bytes(const Model<float>& model) {
  ByteWriter w;
  w.magic("LLPM");
  w.u8(1);
  w.u8(static_cast<uint8_t>(model.kind()));
  w.u8(static_cast<uint8_t>(model.classes()));
  w.u16(static_cast<uint16_t>(model.hyper()));
  for (const Tensor<float>* b : model.blocks())
    for (int64_t i = 0; i < b->numel(); ++i) w.f32((*b)[i]);
  return w.take();
}

Model<float> model_from_bytes(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_magic("LLPM", "model file");
  const uint8_t version = r.u8();
  if (version != 1)
    throw FormatError(FormatError::Kind::BadVersion,
                      "model file: unsupported version " + std::to_string(version));
  const uint8_t kind_code = r.u8();
  if (kind_code > 1)
    throw FormatError(FormatError::Kind::BadValue,
                      "model file: unknown kind code " + std::to_string(kind_code));
  const int n = r.u8();
  const int hyper = r.u16();
  if (n < 1 || hyper < 1)
    throw FormatError(FormatError::Kind::BadValue, "model file: non-positive dimensions");
  Model<float> model = init_model<float>(static_cast<ModelKind>(kind_code), hyper, n, 0);
  for (Tensor<float>* b : model.blocks())
    for (int64_t i = 0; i < b->numel(); ++i) (*b)[i] = r.f32();
  if (r.remaining() != 0)
    throw FormatError(FormatError::Kind::BadValue,
                      "model file: " + std::to_string(r.remaining()) + " trailing bytes");
  return model;
}

void save_model(const std::string& path, const Model<float>& model) {
  write_file(path, model_to_bytes(model));
}

Model<float> load_model(const std::string& path) { return model_from_bytes(read_file(path)); }

#define LLP_INSTANTIATE_MODELS(T)                                                             \
  template Tensor<T> extract_patches<T>(const Tensor<T>&);                                    \
  template ChipPrediction<T> downconv_forward<T>(const Tensor<T>&, const DownconvParams<T>&); \
  template ChipPrediction<T> qkm_forward<T>(const Tensor<T>&, const QkmParams<T>&);           \
  template class Model<T>;                                                                    \
  template Model<T> init_model<T>(ModelKind, int, int, uint64_t);

LLP_INSTANTIATE_MODELS(float)
LLP_INSTANTIATE_MODELS(double)
#undef LLP_INSTANTIATE_MODELS

template Model<float> Model<double>::cast<float>() const;
template Model<double> Model<float>::cast<double>() const;

}  // namespace llp
