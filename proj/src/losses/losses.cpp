#include "icopro/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "icopro/errors.hpp"

namespace icopro::losses {
namespace {

using grad::DenseTensor;

double row_max(std::span<const double> row) {
    return *std::max_element(row.begin(), row.end());
}

void check_label(std::size_t actions, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= actions) {
        throw ConfigError("label action " + std::to_string(label) + " out of range");
    }
}

std::size_t argmax_with_margin(std::span<const double> q_row, int label, double margin) {
    std::size_t best = 0;
    double best_v = q_row[0] + (label == 0 ? 0.0 : margin);
    for (std::size_t a = 1; a < q_row.size(); ++a) {
        const double v = q_row[a] + (static_cast<int>(a) == label ? 0.0 : margin);
        if (v > best_v) {
            best_v = v;
            best = a;
        }
    }
    return best;
}

DenseTensor stack(const std::vector<const env::Observation*>& rows, std::size_t dim) {
    DenseTensor out({rows.size(), dim});
    auto data = out.data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r]->size() != dim) throw ConfigError("observation dimension does not match Q input");
        std::copy(rows[r]->begin(), rows[r]->end(), data.begin() + static_cast<std::ptrdiff_t>(r * dim));
    }
    return out;
}

std::span<const double> row_of(const DenseTensor& t, std::size_t r) {
    return t.data().subspan(r * t.cols(), t.cols());
}

} // namespace

void LossWeights::validate() const {
    if (!(margin >= 0.0)) throw ConfigError("margin C must be >= 0");
    if (!(pseudo_weight >= 0.0 && pseudo_weight <= 1.0)) throw ConfigError("pseudo weight must lie in [0, 1]");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (n_step < 1) throw ConfigError("n_step must be >= 1");
}

double margin_loss(std::span<const double> q_row, int label, double margin) {
    check_label(q_row.size(), label);
    const std::size_t best = argmax_with_margin(q_row, label, margin);
    const double top = q_row[best] + (static_cast<int>(best) == label ? 0.0 : margin);
    return top - q_row[static_cast<std::size_t>(label)];
}

std::vector<double> margin_loss_grad(std::span<const double> q_row, int label, double margin) {
    check_label(q_row.size(), label);
    std::vector<double> g(q_row.size(), 0.0);
    g[argmax_with_margin(q_row, label, margin)] += 1.0;
    g[static_cast<std::size_t>(label)] -= 1.0;
    return g;
}

double pseudo_margin_loss(std::span<const double> q_row, std::span<const double> tgt_row, double margin) {
    if (q_row.size() != tgt_row.size()) throw ConfigError("pseudo margin rows differ in size");
    return margin_loss(q_row, q::greedy_action(tgt_row), margin);
}

double td1_target(double reward, bool terminal, double gamma, std::span<const double> tgt_next_row) {
    return terminal ? reward : reward + gamma * row_max(tgt_next_row);
}

double pvp_loss(std::span<const double> q_row, int executed, int label) {
    check_label(q_row.size(), executed);
    check_label(q_row.size(), label);
    const double up = q_row[static_cast<std::size_t>(label)] - 1.0;
    const double down = q_row[static_cast<std::size_t>(executed)] + 1.0;
    return up * up + down * down;
}

NStepTarget nstep_target(std::span<const buffers::Transition> window, double gamma, int n) {
    if (window.empty()) throw UsageError("empty N-step window");
    if (n < 1) throw UsageError("N-step length must be >= 1");
    NStepTarget out;
    double discount = 1.0;
    const std::size_t limit = std::min(window.size(), static_cast<std::size_t>(n));
    for (std::size_t k = 0; k < limit; ++k) {
        const auto& t = window[k];
        if (k > 0 && t.episode_id != window[k - 1].episode_id) {
            throw UsageError("N-step window crosses an episode boundary without a terminal");
        }
        out.discounted_return += discount * t.reward;
        discount *= gamma;
        out.length = static_cast<int>(k + 1);
        out.bootstrap_index = k;
        if (t.terminal) {
            out.bootstrap_discount = 0.0;
            return out;
        }
    }
    out.bootstrap_discount = discount;
    return out;
}

double td1_loss(const buffers::Transition& t, const q::QFunction& q, const q::TargetQ& tgt, double gamma) {
    const auto row = q::q_values(q, t.obs);
    check_label(row.size(), t.action);
    const double y = td1_target(t.reward, t.terminal, gamma, q::q_values(tgt, t.next_obs));
    const double d = row[static_cast<std::size_t>(t.action)] - y;
    return d * d;
}

double tdn_loss(std::span<const buffers::Transition> window, const q::QFunction& q, const q::TargetQ& tgt,
                double gamma, int n) {
    const auto target = nstep_target(window, gamma, n);
    const auto& first = window.front();
    const auto row = q::q_values(q, first.obs);
    check_label(row.size(), first.action);
    double y = target.discounted_return;
    if (target.bootstrap_discount != 0.0) {
        y += target.bootstrap_discount * row_max(q::q_values(tgt, window[target.bootstrap_index].next_obs));
    }
    const double d = row[static_cast<std::size_t>(first.action)] - y;
    return d * d;
}

PropWeights PropWeights::icopro(const LossWeights& w) {
    PropWeights p;
    p.label_margin = 1.0 - w.pseudo_weight;
    p.pseudo_margin = w.pseudo_weight;
    p.margin = w.margin;
    p.gamma = w.gamma;
    return p;
}

PropWeights PropWeights::dqfd(const LossWeights& w) {
    PropWeights p = icopro(w);
    p.label_margin = 1.0;
    p.pseudo_margin = 0.0;
    return p;
}

PropWeights PropWeights::pvp_variant(const LossWeights& w, bool with_rewards) {
    PropWeights p = icopro(w);
    p.label_margin = 0.0;
    p.pseudo_margin = 0.0;
    p.pvp = 1.0;
    p.zero_rewards = !with_rewards;
    return p;
}

PropWeights PropWeights::td_only(const LossWeights& w) {
    PropWeights p = icopro(w);
    p.label_margin = 0.0;
    p.pseudo_margin = 0.0;
    return p;
}

LossResult combined_prop_loss(std::span<const EnvSample> env_batch, std::span<const LabelSample> label_batch,
                              const q::QFunction& q, const q::TargetQ& tgt, const PropWeights& w) {
    if (env_batch.empty()) throw UsageError("empty env minibatch");
    const std::size_t B = env_batch.size();
    const std::size_t L = label_batch.size();
    const std::size_t A = static_cast<std::size_t>(q.action_count);

    std::vector<const env::Observation*> online_rows;
    std::vector<const env::Observation*> target_rows;
    online_rows.reserve(B + L);
    target_rows.reserve(3 * B);
    for (const auto& s : env_batch) {
        check_label(A, s.transition->action);
        online_rows.push_back(&s.transition->obs);
    }
    for (const auto& l : label_batch) {
        check_label(A, l.label);
        check_label(A, l.executed);
        online_rows.push_back(l.obs);
    }
    for (const auto& s : env_batch) target_rows.push_back(&s.transition->next_obs);
    for (const auto& s : env_batch) target_rows.push_back(s.nstep_obs ? s.nstep_obs : &s.transition->next_obs);
    for (const auto& s : env_batch) target_rows.push_back(&s.transition->obs);

    const auto tape = q::q_forward_recorded(q, stack(online_rows, q.obs_dim));
    const auto tq = q::q_values_batch(tgt.net(), stack(target_rows, q.obs_dim));
    DenseTensor dq(tape.q.shape(), 0.0);

    LossResult out;
    auto& terms = out.terms;
    const double inv_b = 1.0 / static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b) {
        const auto& s = env_batch[b];
        const auto& t = *s.transition;
        const std::size_t a = static_cast<std::size_t>(t.action);
        const double q_sa = tape.q(b, a);

        const double r1 = w.zero_rewards ? 0.0 : t.reward;
        const double y1 = td1_target(r1, t.terminal, w.gamma, row_of(tq, b));
        const double d1 = q_sa - y1;
        terms.td1 += d1 * d1 * inv_b;

        double yn = w.zero_rewards ? 0.0 : s.nstep.discounted_return;
        if (s.nstep.bootstrap_discount != 0.0) yn += s.nstep.bootstrap_discount * row_max(row_of(tq, B + b));
        const double dn = q_sa - yn;
        terms.tdn += dn * dn * inv_b;

        dq(b, a) += 2.0 * (w.td1 * d1 + w.tdn * dn) * inv_b;
        if (!s.labeled) ++terms.unlabeled;
    }

    if (terms.unlabeled > 0) {
        const double inv_u = 1.0 / terms.unlabeled;
        for (std::size_t b = 0; b < B; ++b) {
            if (env_batch[b].labeled) continue;
            const auto q_row = row_of(tape.q, b);
            const int pseudo = q::greedy_action(row_of(tq, 2 * B + b));
            terms.pseudo_margin += margin_loss(q_row, pseudo, w.margin) * inv_u;
            if (w.pseudo_margin != 0.0) {
                const auto g = margin_loss_grad(q_row, pseudo, w.margin);
                for (std::size_t a = 0; a < A; ++a) dq(b, a) += w.pseudo_margin * g[a] * inv_u;
            }
        }
    }

    terms.empty_labels = L == 0;
    if (L > 0) {
        const double inv_l = 1.0 / static_cast<double>(L);
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t r = B + l;
            const auto q_row = row_of(tape.q, r);
            const auto& ls = label_batch[l];
            terms.label_margin += margin_loss(q_row, ls.label, w.margin) * inv_l;
            terms.pvp += pvp_loss(q_row, ls.executed, ls.label) * inv_l;
            if (w.label_margin != 0.0) {
                const auto g = margin_loss_grad(q_row, ls.label, w.margin);
                for (std::size_t a = 0; a < A; ++a) dq(r, a) += w.label_margin * g[a] * inv_l;
            }
            if (w.pvp != 0.0) {
                const std::size_t up = static_cast<std::size_t>(ls.label);
                const std::size_t down = static_cast<std::size_t>(ls.executed);
                dq(r, up) += w.pvp * 2.0 * (q_row[up] - 1.0) * inv_l;
                dq(r, down) += w.pvp * 2.0 * (q_row[down] + 1.0) * inv_l;
            }
        }
    }

    out.total = w.td1 * terms.td1 + w.tdn * terms.tdn + w.label_margin * terms.label_margin +
                w.pseudo_margin * terms.pseudo_margin + w.pvp * terms.pvp;
    out.grads = q::q_backward(q, tape, dq);
    return out;
}

LossResult label_margin_loss(std::span<const LabelSample> label_batch, const q::QFunction& q, double margin) {
    if (label_batch.empty()) throw UsageError("empty label minibatch");
    const std::size_t L = label_batch.size();
    const std::size_t A = static_cast<std::size_t>(q.action_count);
    std::vector<const env::Observation*> rows;
    rows.reserve(L);
    for (const auto& l : label_batch) {
        check_label(A, l.label);
        rows.push_back(l.obs);
    }
    const auto tape = q::q_forward_recorded(q, stack(rows, q.obs_dim));
    DenseTensor dq(tape.q.shape(), 0.0);
    LossResult out;
    const double inv_l = 1.0 / static_cast<double>(L);
    for (std::size_t l = 0; l < L; ++l) {
        const auto q_row = row_of(tape.q, l);
        out.terms.label_margin += margin_loss(q_row, label_batch[l].label, margin) * inv_l;
        const auto g = margin_loss_grad(q_row, label_batch[l].label, margin);
        for (std::size_t a = 0; a < A; ++a) dq(l, a) = g[a] * inv_l;
    }
    out.total = out.terms.label_margin;
    out.grads = q::q_backward(q, tape, dq);
    return out;
}

double label_accuracy(std::span<const LabelSample> labels, const q::QFunction& q) {
    if (labels.empty()) return 0.0;
    constexpr std::size_t chunk = 1024;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < labels.size(); start += chunk) {
        const std::size_t end = std::min(labels.size(), start + chunk);
        std::vector<const env::Observation*> rows;
        for (std::size_t i = start; i < end; ++i) rows.push_back(labels[i].obs);
        const auto qv = q::q_values_batch(q, stack(rows, q.obs_dim));
        for (std::size_t i = start; i < end; ++i) {
            hits += q::greedy_action(row_of(qv, i - start)) == labels[i].label;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

} // namespace icopro::losses
