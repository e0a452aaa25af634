"""
Matching with on-demand view synthesis.

Steps of increasing cost are tried in order.  Each step synthesizes views
of both images, extracts features from them, adds those to the features
already found, and verifies the matches geometrically.  The loop stops at
the first step that verifies enough correspondences.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing.context import BaseContext
from typing import List, NamedTuple, Tuple, Union

import numpy as np

from wxbs.core import FeatureSet, Image
from wxbs.descriptor import describe_lafs
from wxbs.estimator import (
    MINIMAL_SAMPLE,
    RansacParams,
    TwoViewModel,
    laf_check_arrays,
    loransac,
)
from wxbs.exceptions import ImageTooSmall, InsufficientData, NoModelFound
from wxbs.matcher import Correspondence, MatcherParams, duplicate_filter, match_features
from wxbs.pyramid import build_scale_space, detect
from wxbs.shape import BaumbergParams, adapt_lafs, orient_lafs
from wxbs.synth import (
    StepConfig,
    SynthViewSpec,
    backproject_features,
    default_steps,
    gen_views,
    select_steps,
    synth_view,
)
from wxbs.worker import ImageRef, _deref_image, _init_worker

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModsConfig:
    """Matcher configuration.

    Attributes:
      steps: available steps.
      ladder: order/subset of `steps` by id, e.g. "5,1-7" (all if None).
      theta_m: verified correspondences needed to stop.
      s_max: run at most this many steps (all if None).
      matcher: tentative correspondence settings.
      ransac: geometric verification settings.
      model: "homography", "fundamental" or "auto".
      duplicate_radius: pixels, see `matcher.duplicate_filter`.
      laf_check_threshold: pixels, defaults to the RANSAC threshold.
      baumberg: shape adaptation settings for "hessaff" steps.
    """

    steps: Tuple[StepConfig, ...] = field(
        default_factory=lambda: tuple(default_steps())
    )
    ladder: Union[str, None] = None
    theta_m: int = 15
    s_max: Union[int, None] = None
    matcher: MatcherParams = field(default_factory=MatcherParams)
    ransac: RansacParams = field(default_factory=RansacParams)
    model: str = "auto"
    duplicate_radius: float = 3.0
    laf_check_threshold: Union[float, None] = None
    baumberg: BaumbergParams = field(default_factory=BaumbergParams)

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise ValueError("At least one step is required")
        if self.model not in ("homography", "fundamental", "auto"):
            raise ValueError(f"Unknown model: {self.model!r}")
        kind = "homography" if self.model == "homography" else "fundamental"
        needed = MINIMAL_SAMPLE[kind] + 1
        if self.theta_m < needed:
            raise ValueError(
                f"theta_m must be >= {needed} for {self.model}, got {self.theta_m}"
            )
        if self.s_max is not None and self.s_max < 1:
            raise ValueError("s_max must be >= 1")
        if self.duplicate_radius < 0:
            raise ValueError("duplicate_radius must be >= 0")
        # Fail early on bad ladders
        self.active_steps()

    def active_steps(self) -> List[StepConfig]:
        steps = select_steps(self.steps, self.ladder)
        if self.s_max is not None:
            steps = steps[: self.s_max]
        return steps

    @property
    def laf_threshold(self) -> float:
        if self.laf_check_threshold is None:
            return self.ransac.inlier_threshold
        return self.laf_check_threshold


class StepRecord(NamedTuple):
    """What one executed step did.  Feature counts are cumulative."""

    step_id: int
    views: Tuple[int, int]
    features: Tuple[int, int]
    tentatives: int
    ransac_inliers: int
    laf_inliers: int
    seconds: float


@dataclass(eq=False)
class MatchResult:
    """Outcome of matching.

    Attributes:
      success: True if `theta_m` correspondences survived the LAF check.
      model: best model found, also on failure (None if there was none).
      correspondences: verified correspondences of the best model.
      features1, features2: accumulated features of both images.
      records: one record per executed step.
    """

    success: bool
    model: Union[TwoViewModel, None]
    correspondences: List[Correspondence]
    features1: FeatureSet
    features2: FeatureSet
    records: List[StepRecord] = field(default_factory=list)

    @property
    def steps_used(self) -> int:
        return len(self.records)

    @property
    def num_inliers(self) -> int:
        return len(self.correspondences)

    def points(self) -> Tuple[np.ndarray, np.ndarray]:
        """Matched centers in both images, (N, 2) each."""
        ia = [c.idx_a for c in self.correspondences]
        ib = [c.idx_b for c in self.correspondences]
        return (
            self.features1.centers[ia].reshape(-1, 2),
            self.features2.centers[ib].reshape(-1, 2),
        )


def extract_view(
    img: Image,
    step: StepConfig,
    spec: SynthViewSpec,
    view_id: int,
    baumberg: BaumbergParams = BaumbergParams(),
) -> FeatureSet:
    """Features of one synthesized view, in original-image coordinates."""
    try:
        view, A_view = synth_view(img, spec)
        ss = build_scale_space(view, step.detector_params)
    except ImageTooSmall as e:
        log.warning("Skipping view: %s", e)
        return FeatureSet.empty()
    kind = "dog" if step.detector == "dog" else "hessian"
    lafs = detect(ss, kind, step.detector_params, view_id)
    if step.detector == "hessaff":
        lafs = adapt_lafs(view, lafs, baumberg)
    lafs = orient_lafs(view, lafs)
    desc, ok = describe_lafs(view, lafs, step.descriptor)
    kept = [f for f, good in zip(lafs, ok) if good]
    feats = FeatureSet.from_lafs(kept, desc[ok], pool=step.pool)
    feats.detector = [step.detector] * len(feats)
    feats = backproject_features(feats, A_view, view_id)
    c = feats.centers
    inside = (
        (c[:, 0] >= 0)
        & (c[:, 0] <= img.width - 1)
        & (c[:, 1] >= 0)
        & (c[:, 1] <= img.height - 1)
    )
    log.debug(
        "View %d %s: %d features (%d outside)",
        view_id,
        spec,
        np.count_nonzero(inside),
        len(feats) - np.count_nonzero(inside),
    )
    return feats.select(inside)


ExtractTask = Tuple[ImageRef, StepConfig, SynthViewSpec, int, BaumbergParams]


def _extract_in_worker(task: ExtractTask) -> FeatureSet:
    ref, step, spec, view_id, baumberg = task
    return extract_view(_deref_image(ref), step, spec, view_id, baumberg)


def extract_features(
    img: Image,
    step: StepConfig,
    baumberg: BaumbergParams = BaumbergParams(),
    max_workers: Union[int, None] = 1,
    mp_context: Union[BaseContext, None] = None,
) -> FeatureSet:
    """Features of all views of a step for a single image.

    Views are extracted in worker processes unless `max_workers` is 1.
    """
    tasks: List[ExtractTask] = [
        (0, step, spec, view_id, baumberg)
        for view_id, spec in enumerate(gen_views(step))
    ]
    if max_workers is not None and max_workers <= 1:
        return FeatureSet.concat(
            extract_view(img, step, spec, view_id, baumberg)
            for _, _, spec, view_id, _ in tasks
        )
    with ProcessPoolExecutor(
        max_workers=max_workers,
        mp_context=mp_context,
        initializer=_init_worker,  # type: ignore[arg-type]
        initargs=((img,),),
    ) as pool:
        return FeatureSet.concat(pool.map(_extract_in_worker, tasks))


class ModsMatcher:
    """Match two images, optionally extracting views in worker processes.

    Use as a context manager so that workers are shut down.
    """

    def __init__(
        self,
        img1: Image,
        img2: Image,
        cfg: ModsConfig = ModsConfig(),
        max_workers: Union[int, None] = 1,
        mp_context: Union[BaseContext, None] = None,
    ) -> None:
        self.images = (img1, img2)
        self.cfg = cfg
        self._pool: Union[ProcessPoolExecutor, None] = None
        if max_workers is None or max_workers > 1:
            self._pool = ProcessPoolExecutor(
                max_workers=max_workers,
                mp_context=mp_context,
                initializer=_init_worker,  # type: ignore[arg-type]
                initargs=(self.images,),
            )

    def __enter__(self) -> "ModsMatcher":
        return self

    def __exit__(self, *args) -> None:
        self.close()

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def extract(
        self, step: StepConfig, first_view_id: int = 0
    ) -> Tuple[FeatureSet, FeatureSet, int]:
        """Features of all views of a step for both images.

        Returns the two feature sets and the number of views per image.
        """
        views = gen_views(step)
        tasks: List[ExtractTask] = [
            (ref, step, spec, first_view_id + k, self.cfg.baumberg)
            for ref in (0, 1)
            for k, spec in enumerate(views)
        ]
        if self._pool is not None:
            results = list(self._pool.map(_extract_in_worker, tasks))
        else:
            results = [
                extract_view(self.images[ref], st, spec, vid, baum)
                for ref, st, spec, vid, baum in tasks
            ]
        n = len(views)
        return FeatureSet.concat(results[:n]), FeatureSet.concat(results[n:]), n

    def verify(
        self, f1: FeatureSet, f2: FeatureSet
    ) -> Tuple[
        List[Correspondence], Union[TwoViewModel, None], int, List[Correspondence]
    ]:
        """Match, filter duplicates, estimate the model and LAF-check it.

        Returns tentatives, model, RANSAC inlier count and the verified
        correspondences.
        """
        cfg = self.cfg
        if len(f1) == 0 or len(f2) == 0:
            return [], None, 0, []
        corrs = match_features(f1, f2, cfg.matcher)
        corrs = duplicate_filter(corrs, f1.centers, f2.centers, cfg.duplicate_radius)
        if not corrs:
            return corrs, None, 0, []
        ia = np.array([c.idx_a for c in corrs])
        ib = np.array([c.idx_b for c in corrs])
        u = f1.centers[ia]
        v = f2.centers[ib]
        try:
            model = loransac(u, v, cfg.model, cfg.ransac)
        except (NoModelFound, InsufficientData) as e:
            log.debug("Verification failed: %s", e)
            return corrs, None, 0, []
        inl = model.inliers
        keep = laf_check_arrays(
            model, u[inl], f1.A[ia[inl]], v[inl], f2.A[ib[inl]], cfg.laf_threshold
        )
        n_ransac = len(inl)
        model.inliers = inl[keep]
        return corrs, model, n_ransac, [corrs[i] for i in model.inliers]

    def run(self) -> MatchResult:
        cfg = self.cfg
        feats = (FeatureSet.empty(), FeatureSet.empty())
        records: List[StepRecord] = []
        best_model: Union[TwoViewModel, None] = None
        best_corrs: List[Correspondence] = []
        next_view = 0
        success = False
        for step in cfg.active_steps():
            t0 = time.perf_counter()
            new1, new2, nviews = self.extract(step, next_view)
            next_view += nviews
            feats = (
                FeatureSet.concat([feats[0], new1]),
                FeatureSet.concat([feats[1], new2]),
            )
            tentatives, model, n_ransac, verified = self.verify(*feats)
            better = best_model is None or len(verified) > len(best_corrs)
            if model is not None and better:
                best_model = model
                best_corrs = verified
            record = StepRecord(
                step.step_id,
                (nviews, nviews),
                (len(feats[0]), len(feats[1])),
                len(tentatives),
                n_ransac,
                len(verified),
                time.perf_counter() - t0,
            )
            records.append(record)
            log.info(
                "Step %d: %d views, %d/%d features, %d tentatives, "
                "%d RANSAC inliers, %d after LAF check, %.2fs",
                record.step_id,
                nviews,
                record.features[0],
                record.features[1],
                record.tentatives,
                record.ransac_inliers,
                record.laf_inliers,
                record.seconds,
            )
            if len(verified) >= cfg.theta_m:
                success = True
                break
        return MatchResult(success, best_model, best_corrs, feats[0], feats[1], records)


def run_mods(
    img1: Image,
    img2: Image,
    cfg: ModsConfig = ModsConfig(),
    max_workers: Union[int, None] = 1,
    mp_context: Union[BaseContext, None] = None,
) -> MatchResult:
    """Match two images, see `ModsMatcher`."""
    with ModsMatcher(img1, img2, cfg, max_workers, mp_context) as matcher:
        return matcher.run()
