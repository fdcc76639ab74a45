#pragma once

#include <span>
#include <vector>

#include "icopro/buffers/transition.hpp"
#include "icopro/q/qfunction.hpp"

namespace icopro::losses {

struct LossWeights {
    double margin = 0.05;      // C
    double pseudo_weight = 0.5; // w-bar
    double gamma = 0.99;
    int n_step = 20;

    void validate() const;
};

// Row-level pieces.

/// max_a [q_a + l(label, a)] - q_label with l = C off the label.
double margin_loss(std::span<const double> q_row, int label, double margin);
/// Subgradient with respect to q_row; ties in the max resolve to the lowest index.
std::vector<double> margin_loss_grad(std::span<const double> q_row, int label, double margin);

/// Margin loss against the target network's own greedy action.
double pseudo_margin_loss(std::span<const double> q_row, std::span<const double> tgt_row, double margin);

double td1_target(double reward, bool terminal, double gamma, std::span<const double> tgt_next_row);

/// (Q(s,a^L) - 1)^2 + (Q(s,a) + 1)^2, applied verbatim when a == a^L.
double pvp_loss(std::span<const double> q_row, int executed, int label);

/// Truncated N-step return starting at window[0]. The window may be shorter
/// than n at the end of the stored data; the bootstrap then comes from the
/// last available step.
struct NStepTarget {
    double discounted_return = 0.0;
    double bootstrap_discount = 0.0; // gamma^k, or 0 when a terminal was reached
    std::size_t bootstrap_index = 0; // bootstrap from window[bootstrap_index].next_obs
    int length = 0;
};

/// Throws UsageError if the window steps into another episode before a terminal.
NStepTarget nstep_target(std::span<const buffers::Transition> window, double gamma, int n);

// Network-level losses, evaluated on single samples.

double td1_loss(const buffers::Transition& t, const q::QFunction& q, const q::TargetQ& tgt, double gamma);
double tdn_loss(std::span<const buffers::Transition> window, const q::QFunction& q, const q::TargetQ& tgt,
                double gamma, int n);

// Batched objectives with gradients.

struct EnvSample {
    const buffers::Transition* transition = nullptr;
    NStepTarget nstep;
    const env::Observation* nstep_obs = nullptr;
    bool labeled = false;
};

struct LabelSample {
    const env::Observation* obs = nullptr;
    int executed = 0;
    int label = 0;
};

/// Term weights. The ICoPro objective is td1 + tdn + (1-w)·label + w·pseudo.
struct PropWeights {
    double td1 = 1.0;
    double tdn = 1.0;
    double label_margin = 0.5;
    double pseudo_margin = 0.5;
    double pvp = 0.0;
    bool zero_rewards = false;
    double margin = 0.05;
    double gamma = 0.99;

    static PropWeights icopro(const LossWeights& w);
    static PropWeights dqfd(const LossWeights& w);
    static PropWeights pvp_variant(const LossWeights& w, bool with_rewards);
    static PropWeights td_only(const LossWeights& w);
};

struct PropTerms {
    double td1 = 0.0;
    double tdn = 0.0;
    double label_margin = 0.0;
    double pseudo_margin = 0.0;
    double pvp = 0.0;
    int unlabeled = 0;
    bool empty_labels = false;
};

struct LossResult {
    double total = 0.0;
    PropTerms terms;
    q::QGradients grads;
};

/// Weighted total over one env minibatch and one label minibatch. Each term is
/// a mean over its own samples; the pseudo term averages over unlabeled env
/// states only. An empty label batch contributes zero label and PVP terms.
LossResult combined_prop_loss(std::span<const EnvSample> env_batch, std::span<const LabelSample> label_batch,
                              const q::QFunction& q, const q::TargetQ& tgt, const PropWeights& weights);

/// Mean margin loss over a label minibatch (the alignment objective).
LossResult label_margin_loss(std::span<const LabelSample> label_batch, const q::QFunction& q, double margin);

/// Fraction of labels equal to argmax_a Q(s, a).
double label_accuracy(std::span<const LabelSample> labels, const q::QFunction& q);

} // namespace icopro::losses
