#pragma once

#include <vector>

#include "kale/ops.hpp"
#include "kale/tensor.hpp"

namespace kale {

enum class Similarity { cosine, dot };

inline std::string to_string(Similarity s) {
  return s == Similarity::cosine ? "cosine" : "dot";
}

inline Similarity similarity_from_string(const std::string& s) {
  if (s == "cosine") return Similarity::cosine;
  if (s == "dot") return Similarity::dot;
  throw ParseError("unknown similarity '" + s + "'");
}

// 1 - cos(x, y), differentiable with respect to both vectors.
template <typename S>
Tensor<S> cosine_loss(const Tensor<S>& x, const Tensor<S>& y) {
  Tensor<S> xx = dot(x, x);
  Tensor<S> yy = dot(y, y);
  if (xx.item() == S(0) || yy.item() == S(0))
    throw ParameterError("cosine_loss: zero-norm vector");
  Tensor<S> cos = div(dot(x, y), sqrt(mul(xx, yy)));
  return sub(Tensor<S>::scalar(S(1)), cos);
}

// Mean cross-entropy over the batch of a softmax across candidate
// similarities; candidates are every in-batch positive plus every explicit
// negative, shared by all queries. The positive for query i sits at column
// i.
template <typename S>
Tensor<S> in_batch_contrastive_loss(const std::vector<Tensor<S>>& queries,
                                    const std::vector<Tensor<S>>& positives,
                                    const std::vector<Tensor<S>>& negatives,
                                    Similarity sim = Similarity::cosine) {
  if (queries.empty() || queries.size() != positives.size())
    throw ParameterError("contrastive loss: need one positive per query");
  if (queries.size() < 2 && negatives.empty())
    throw ConfigError(
        "contrastive loss: a single query needs at least one explicit negative");
  std::vector<Tensor<S>> candidates = positives;
  candidates.insert(candidates.end(), negatives.begin(), negatives.end());
  Tensor<S> q = stack_rows(queries);
  Tensor<S> d = stack_rows(candidates);
  if (sim == Similarity::cosine) {
    q = l2_normalize_rows(q);
    d = l2_normalize_rows(d);
  }
  Tensor<S> scores = matmul(q, transpose(d));
  std::vector<int> targets(queries.size());
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<int>(i);
  return softmax_cross_entropy(scores, targets, S(1));
}

// The batch's candidate-softmax argmax accuracy; chance is 1/candidates.
template <typename S>
double contrastive_accuracy(const std::vector<Tensor<S>>& queries,
                            const std::vector<Tensor<S>>& positives,
                            const std::vector<Tensor<S>>& negatives,
                            Similarity sim = Similarity::cosine) {
  NoGradGuard ng;
  std::vector<Tensor<S>> candidates = positives;
  candidates.insert(candidates.end(), negatives.begin(), negatives.end());
  Tensor<S> q = stack_rows(queries);
  Tensor<S> d = stack_rows(candidates);
  if (sim == Similarity::cosine) {
    q = l2_normalize_rows(q);
    d = l2_normalize_rows(d);
  }
  Tensor<S> scores = matmul(q, transpose(d));
  const int m = scores.dim(0), n = scores.dim(1);
  int hits = 0;
  for (int i = 0; i < m; ++i) {
    const S* rowp = scores.value().data() + static_cast<std::size_t>(i) * n;
    int best = 0;
    for (int j = 1; j < n; ++j)
      if (rowp[j] > rowp[best]) best = j;
    if (best == i) ++hits;
  }
  return static_cast<double>(hits) / m;
}

enum class AlignDistance { kl, reverse_kl, cosine, manhattan };

inline std::string to_string(AlignDistance d) {
  switch (d) {
    case AlignDistance::kl: return "kl";
    case AlignDistance::reverse_kl: return "reverse_kl";
    case AlignDistance::cosine: return "cosine";
    case AlignDistance::manhattan: return "manhattan";
  }
  return "kl";
}

inline AlignDistance align_distance_from_string(const std::string& s) {
  if (s == "kl") return AlignDistance::kl;
  if (s == "reverse_kl") return AlignDistance::reverse_kl;
  if (s == "cosine") return AlignDistance::cosine;
  if (s == "manhattan") return AlignDistance::manhattan;
  throw ParseError("unknown alignment distance '" + s + "'");
}

// Scaled temperature-softmax KL divergence between a student embedding and a
// frozen teacher embedding. The student distribution is the first KL
// argument; gradients flow to the student only.
template <typename S>
Tensor<S> kale_loss(const Tensor<S>& student_vec, const Tensor<S>& teacher_vec,
                    S temperature, S loss_scale,
                    AlignDistance distance = AlignDistance::kl) {
  if (student_vec.numel() != teacher_vec.numel())
    throw InputError("kale_loss: dimension mismatch " + shape_str(student_vec.shape()) +
                     " vs " + shape_str(teacher_vec.shape()));
  if (!(temperature > S(0)) || !(loss_scale > S(0)))
    throw ParameterError("kale_loss: temperature and loss_scale must be positive");
  Tensor<S> teacher = teacher_vec.clone(false);  // constant: no gradient to teacher
  switch (distance) {
    case AlignDistance::kl: {
      Tensor<S> p = softmax(student_vec, temperature);
      Tensor<S> lp = log_softmax(student_vec, temperature);
      Tensor<S> lq = log_softmax(teacher, temperature);
      return scale(sum(mul(p, sub(lp, lq))), loss_scale);
    }
    case AlignDistance::reverse_kl: {
      Tensor<S> q = softmax(teacher, temperature);
      Tensor<S> lq = log_softmax(teacher, temperature);
      Tensor<S> lp = log_softmax(student_vec, temperature);
      return scale(sum(mul(q, sub(lq, lp))), loss_scale);
    }
    case AlignDistance::cosine:
      return scale(cosine_loss(student_vec, teacher), loss_scale);
    case AlignDistance::manhattan: {
      Tensor<S> diff = sub(student_vec, teacher);
      // |d| = sqrt(d^2) is fine away from zero; adding a tiny floor keeps
      // the backward pass finite when student == teacher exactly.
      Tensor<S> sq = mul(diff, diff);
      Tensor<S> floored = add(sq, Tensor<S>::full(sq.shape(), S(1e-12)));
      return scale(sum(sqrt(floored)), loss_scale);
    }
  }
  throw ParameterError("kale_loss: unknown distance");
}

}  // namespace kale
