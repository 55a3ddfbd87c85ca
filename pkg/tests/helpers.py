"""Shared test utilities: small estimator instances and loss gradient checks."""

import numpy as np
import torch

from kb2text.estimator import (
    SupportEstimator,
    loss_concentration,
    loss_margin,
    loss_word_consistent,
    support_matrix,
    support_vector,
)
from kb2text.nncore import grad_check


def make_se_instance(seed=0, vocab_size=30, dim=8, hidden=16, k_len=6, t_len=5):
    """Random small estimator plus token sequences sized per the check contract."""
    rng = np.random.default_rng(seed)
    model = SupportEstimator.create(vocab_size, dim=dim, hidden=hidden, seed=seed)
    k_ids = [int(i) for i in rng.integers(5, vocab_size, size=k_len)]
    t_ids = [int(i) for i in rng.integers(5, vocab_size, size=t_len)]
    # Force at least one shared token so the word-consistency term is active.
    t_ids[0] = k_ids[0]
    neg_pool = [i for i in range(5, vocab_size) if i not in set(t_ids)]
    neg_ids = [neg_pool[int(i)] for i in rng.integers(0, len(neg_pool), size=t_len)]
    return model, k_ids, t_ids, neg_ids


def se_term_loss(model, k_ids, t_ids, neg_ids, term, lw_axis="source"):
    f_k = model.extract_features(k_ids, "src")
    f_t = model.extract_features(t_ids, "tgt")
    m_pos = support_matrix(f_k, f_t)
    if term == "margin":
        f_n = model.extract_features(neg_ids, "tgt")
        m_neg = support_matrix(f_k, f_n)
        return loss_margin(support_vector(m_pos), support_vector(m_neg))
    if term == "word":
        return loss_word_consistent(m_pos, k_ids, t_ids, lw_axis)
    if term == "conc":
        return loss_concentration(m_pos)
    if term == "combined":
        f_n = model.extract_features(neg_ids, "tgt")
        m_neg = support_matrix(f_k, f_n)
        return (
            loss_margin(support_vector(m_pos), support_vector(m_neg))
            + 0.05 * loss_word_consistent(m_pos, k_ids, t_ids, lw_axis)
            + 1.0 * loss_concentration(m_pos)
        )
    raise ValueError(term)


def check_term_gradient(term, seed=0, h=1e-4):
    """Max relative error between autograd and central differences for one term."""
    model, k_ids, t_ids, neg_ids = make_se_instance(seed=seed)
    model.params.zero_grads()
    loss = se_term_loss(model, k_ids, t_ids, neg_ids, term)
    loss.backward()
    analytic = model.params.collect_grads()

    def loss_value(_params):
        with torch.no_grad():
            pass
        return float(se_term_loss(model, k_ids, t_ids, neg_ids, term).detach())

    return grad_check(loss_value, model.params, analytic, h=h, max_coords=200, seed=seed)
