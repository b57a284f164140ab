// Copyright 2026 The PropMix Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PROPMIX_LOSSES_H_
#define PROPMIX_LOSSES_H_

// Loss kernels on network outputs, each with its gradient with respect to
// the tensor it consumes. `grad` in backbone.h chains these into the MLP.

#include <span>
#include <utility>
#include <vector>

#include "propmix/backbone.h"

namespace propmix {

// CE plus reg_weight * KL(uniform || mean row of `probs`).
double regularized_loss(const Matrix& probs, const Matrix& targets, double reg_weight);
// Gradient of `regularized_loss` with respect to the logits that produced
// `probs`.
Matrix regularized_loss_grad_logits(const Matrix& probs, const Matrix& targets,
                                    double reg_weight);

// NT-Xent over 2B unit rows; row i is paired with (i + B) mod 2B. Throws
// ContractViolation if a row is not unit norm (tolerance 1e-6) and
// ShapeError for fewer than 4 rows or an odd count.
double contrastive_loss(const Matrix& embeddings, double temperature);
// Same loss; writes d loss / d embeddings into `d_embeddings`.
double contrastive_loss_grad(const Matrix& embeddings, double temperature,
                             Matrix* d_embeddings);

// -mean over pairs of q_ij * log(p_i . p_j) + entropy_weight * sum_c pbar_c log pbar_c,
// with q_ij = [argmax p_i == argmax p_j] and pbar the mean row of `probs`.
double scan_loss(const Matrix& probs, std::span<const std::pair<int, int>> pairs,
                 double entropy_weight);
double scan_loss_grad(const Matrix& probs, std::span<const std::pair<int, int>> pairs,
                      double entropy_weight, Matrix* d_probs);

// Pulls a gradient on softmax outputs back onto the logits.
Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs);

}  // namespace propmix

#endif  // PROPMIX_LOSSES_H_
