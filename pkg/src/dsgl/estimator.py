"""Scikit-learn style estimators wrapping the full pipeline.

``DSGLClassifier`` composes with the sklearn ecosystem: hyperparameters live
in ``__init__`` (so ``get_params``/``set_params``/``clone`` work), ``fit``
takes (X, y) with rows [user_id, item_id, category_id, timestamp], and
``predict_proba`` returns (n, 2) column-stacked probabilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .data import EventLog, InteractionEvent, negative_sample
from .graphs import DsgSpec, build_index
from .model import ModelConfig
from .training import PopularityModel, TrainConfig, predict_scores, train
from .validation import check_interaction_array, check_labels, check_vocab


def _events_from_arrays(X: np.ndarray, y: np.ndarray) -> list[InteractionEvent]:
    return [InteractionEvent(int(u), int(i), int(c), int(t), int(label))
            for (u, i, c, t), label in zip(X, y)]


class DSGLClassifier(BaseEstimator, ClassifierMixin):
    """Click-through-rate classifier over timestamped interaction data.

    Defaults are scaled for desk-size experiments; the model itself supports
    arbitrary depths and widths. If ``fit`` receives only positive labels,
    one negative per positive is sampled automatically (an item the user
    never interacts with, at the positive's timestamp).
    """

    def __init__(self, depth=2, user_fanouts=(10, 5, 5), item_fanouts=(5, 5),
                 d_user=16, d_item=8, d_cat=8, d_time=8, hidden=16, heads=2,
                 mlp_hidden=(32, 16), time_base=2.0, time_buckets=24,
                 ablations=(), attn_scale_outside=False, loss_reduction="mean",
                 batch_size=64, lr=0.001, max_steps=400, eval_every=50,
                 patience=10, valid_frac=0.1, precision="f64", seed=0):
        self.depth = depth
        self.user_fanouts = user_fanouts
        self.item_fanouts = item_fanouts
        self.d_user = d_user
        self.d_item = d_item
        self.d_cat = d_cat
        self.d_time = d_time
        self.hidden = hidden
        self.heads = heads
        self.mlp_hidden = mlp_hidden
        self.time_base = time_base
        self.time_buckets = time_buckets
        self.ablations = ablations
        self.attn_scale_outside = attn_scale_outside
        self.loss_reduction = loss_reduction
        self.batch_size = batch_size
        self.lr = lr
        self.max_steps = max_steps
        self.eval_every = eval_every
        self.patience = patience
        self.valid_frac = valid_frac
        self.precision = precision
        self.seed = seed

    def fit(self, X, y):
        X = check_interaction_array(X)
        y = check_labels(y, X.shape[0])
        if X.shape[0] == 0:
            raise ValueError("fit needs at least one interaction")
        events = _events_from_arrays(X, y)
        log = EventLog.from_events(events)
        positives = EventLog.from_events(
            log.positives(), log.num_users, log.num_items, log.num_categories)
        if np.all(y == 1):
            samples = negative_sample(positives, positives, seed=self.seed)
        else:
            samples = list(log.events)
        n_valid = max(1, int(round(self.valid_frac * len(samples))))
        n_valid = min(n_valid, len(samples) - 1) or 1
        train_part, valid_part = samples[:-n_valid], samples[-n_valid:]
        if not any(s.label == 0 for s in valid_part) or \
                not any(s.label == 1 for s in valid_part):
            # validation AUC needs both classes; fall back to the full set
            valid_part = samples
        self.config_ = ModelConfig(
            num_users=log.num_users, num_items=log.num_items,
            num_categories=log.num_categories,
            d_user=self.d_user, d_item=self.d_item, d_cat=self.d_cat,
            d_time=self.d_time, hidden=self.hidden, heads=self.heads,
            mlp_hidden=tuple(self.mlp_hidden), time_base=self.time_base,
            time_buckets=self.time_buckets,
            spec=DsgSpec(self.depth, tuple(self.user_fanouts), tuple(self.item_fanouts)),
            ablations=tuple(self.ablations),
            attn_scale_outside=self.attn_scale_outside,
            loss_reduction=self.loss_reduction,
        )
        self.index_ = build_index(positives)
        tcfg = TrainConfig(batch_size=self.batch_size, lr=self.lr,
                           max_steps=self.max_steps, eval_every=self.eval_every,
                           patience=self.patience, seed=self.seed,
                           precision=self.precision)
        self.params_, self.report_ = train(self.config_, train_part, valid_part,
                                           self.index_, tcfg)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise ValueError("this DSGLClassifier instance is not fitted yet")

    def predict_proba(self, X):
        self._check_fitted()
        X = check_interaction_array(X)
        cfg = self.config_
        check_vocab(X, cfg.num_users, cfg.num_items, cfg.num_categories)
        samples = [InteractionEvent(int(u), int(i), int(c), int(t), 0) for u, i, c, t in X]
        p = predict_scores(self.params_, cfg, samples, self.index_)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def decision_function(self, X):
        return self.predict_proba(X)[:, 1]


class PopularityClassifier(BaseEstimator, ClassifierMixin):
    """Global item-popularity baseline with the same array interface."""

    def __init__(self):
        pass

    def fit(self, X, y):
        X = check_interaction_array(X)
        y = check_labels(y, X.shape[0])
        events = _events_from_arrays(X, y)
        self.model_ = PopularityModel().fit(events)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        if not hasattr(self, "model_"):
            raise ValueError("this PopularityClassifier instance is not fitted yet")
        X = check_interaction_array(X)
        samples = [InteractionEvent(int(u), int(i), int(c), int(t), 0) for u, i, c, t in X]
        p = self.model_.score_samples(samples)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)
