"""Scikit-learn compatible wrapper around training and seed generation."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .encoder import ModelConfig
from .metrics import evaluate_map, evaluate_miou, seed_mask_from_cams
from .model import forward, predict_maps
from .tensor import no_grad
from .train import TrainConfig, train
from .validation import check_images, check_label_matrix


class SeedCAMClassifier(ClassifierMixin, BaseEstimator):
    """Multi-label image classifier whose activation maps double as seed masks.

    ``fit`` trains from image-level labels only. ``predict_proba`` returns
    per-class probabilities, ``transform`` the (C+1)-channel seed maps on the
    token grid, and ``predict_seeds`` full-resolution class-index masks.

    Parameters
    ----------
    mode : {"v1", "v2"}, default="v2"
        ``"v1"`` trains the classifier alone and derives seeds from its
        CAMs; ``"v2"`` adds feature fusion and prototype refinement.
    image_size, patch_size, embed_dim, depths, num_heads, window_size
        Encoder geometry, see :class:`ModelConfig`.
    steps, batch_size, learning_rate, weight_decay
        Optimization settings, see :class:`TrainConfig`.
    use_gsc, use_ccl : bool, default=True
        Refinement loss switches (ignored in ``"v1"``).
    detach_rcam : bool, default=False
        Stop gradients through the refined maps in the refinement losses.
    detach_cam : bool, default=False
        Stop gradients through the base CAMs in the refinement losses.
    label_gate : bool, default=False
        Zero the CAMs of classes absent from an image's labels during
        training (``transform`` is never gated, it has no labels).
    random_state : int, default=0
        Seeds both parameter initialization and batch order.

    Attributes
    ----------
    params_ : dict
        Trained tensors by name.
    model_config_, train_config_ : ModelConfig, TrainConfig
    history_ : list of dict
        Per-step loss components.
    n_classes_ : int
    classes_ : ndarray
    """

    def __init__(
        self,
        mode="v2",
        image_size=128,
        patch_size=4,
        embed_dim=16,
        depths=(2, 2, 2, 2),
        num_heads=(1, 2, 4, 8),
        window_size=4,
        steps=300,
        batch_size=8,
        learning_rate=3e-4,
        weight_decay=0.01,
        use_gsc=True,
        use_ccl=True,
        detach_rcam=False,
        detach_cam=False,
        label_gate=False,
        random_state=0,
    ):
        self.mode = mode
        self.image_size = image_size
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.depths = depths
        self.num_heads = num_heads
        self.window_size = window_size
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.use_gsc = use_gsc
        self.use_ccl = use_ccl
        self.detach_rcam = detach_rcam
        self.detach_cam = detach_cam
        self.label_gate = label_gate
        self.random_state = random_state

    def _configs(self, n_classes):
        seed = int(self.random_state or 0)
        model_cfg = ModelConfig(
            image_size=self.image_size,
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            depths=tuple(self.depths),
            num_heads=tuple(self.num_heads),
            window_size=self.window_size,
            num_classes=n_classes,
            seed=seed,
        ).validate()
        train_cfg = TrainConfig(
            mode=self.mode,
            steps=self.steps,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            use_gsc=self.use_gsc,
            use_ccl=self.use_ccl,
            detach_rcam=self.detach_rcam,
            detach_cam=self.detach_cam,
            label_gate=self.label_gate,
            seed=seed,
        ).validate()
        return model_cfg, train_cfg

    def fit(self, X, y):
        """Train on images (n, 3, H, W) in [0, 1] and a (n, C) label matrix."""
        X = check_images(X, self.image_size)
        y = check_label_matrix(y, n_samples=len(X))
        self.model_config_, self.train_config_ = self._configs(y.shape[1])
        result = train(self.model_config_, self.train_config_, X, y)
        self.params_ = result.params
        self.history_ = result.history
        self.n_classes_ = y.shape[1]
        self.classes_ = np.arange(self.n_classes_)
        return self

    def _maps(self, X):
        check_is_fitted(self, "params_")
        X = check_images(X, self.model_config_.image_size)
        return predict_maps(self.params_, X, self.model_config_)

    def decision_function(self, X):
        """Pooled class logits, (n, C)."""
        check_is_fitted(self, "params_")
        X = check_images(X, self.model_config_.image_size)
        with no_grad():
            return np.concatenate(
                [forward(self.params_, X[i : i + 16], self.model_config_, refine=False).logits.data
                 for i in range(0, len(X), 16)]
            )

    def predict_proba(self, X):
        return self._maps(X)[0]

    def predict(self, X):
        """Label indicator matrix at probability 0.5."""
        return (self.predict_proba(X) >= 0.5).astype(np.uint8)

    def transform(self, X):
        """(n, C+1, P, P) seed maps; background is the last channel."""
        return self._maps(X)[1]

    def predict_seeds(self, X):
        """(n, H, W) class-index seed masks; background index is C."""
        maps = self.transform(X)
        return seed_mask_from_cams(maps, self.model_config_.image_size, self.model_config_.image_size)

    def score(self, X, y, sample_weight=None):
        """Mean average precision of the class probabilities."""
        y = check_label_matrix(y, n_classes=self.n_classes_)
        return evaluate_map(self.predict_proba(X), y)[0]

    def seed_miou(self, X, masks):
        """Mean IoU of the seed masks against (n, H, W) ground truth."""
        return evaluate_miou(self.predict_seeds(X), np.asarray(masks), self.n_classes_ + 1)[0]
