"""Estimating soil properties from reflectance spectra.

Lab samples carry both a spectrum and expert measurements, so they form the
training set; drone samples carry only spectra and receive estimates. Models
retrain from the live lab collection on every run, which keeps repeated runs
idempotent: same data in, same estimates out.

Per variable, training spectra are aligned on a common wavelength grid: the
sorted union of the training samples' wavelengths, clipped to the range every
sample covers. Inputs are linearly interpolated onto that grid, and an input
must cover the grid's span to be comparable at all.
"""

from __future__ import annotations

import json
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors
from .domain import Prediction, PredictorMeta, Spectrum
from .storage import Store

EXTERNAL_TIMEOUT = 60.0


@dataclass(frozen=True)
class VariableModel:
    """Everything needed to estimate one variable."""

    variable_id: str
    grid: np.ndarray = field(repr=False)       # common wavelength grid
    matrix: np.ndarray = field(repr=False)     # (n_samples, len(grid)) resampled spectra
    values: np.ndarray = field(repr=False)     # (n_samples,) measured values, id-ordered
    sample_ids: tuple[str, ...] = ()

    @property
    def lo(self) -> float:
        return float(self.grid[0])

    @property
    def hi(self) -> float:
        return float(self.grid[-1])


@dataclass(frozen=True)
class TrainedModel:
    meta: PredictorMeta
    variables: dict[str, VariableModel] = field(default_factory=dict)
    # variables with training rows whose wavelength spans share no overlap
    untrainable: frozenset[str] = frozenset()


def resample(spectrum: Spectrum, grid: np.ndarray) -> np.ndarray:
    return np.interp(grid, np.asarray(spectrum.wavelengths), np.asarray(spectrum.values))


def _common_grid(spectra: list[Spectrum]) -> np.ndarray | None:
    """Union of wavelengths clipped to the span every spectrum covers."""
    lo = max(s.wl_min for s in spectra)
    hi = min(s.wl_max for s in spectra)
    if lo > hi:
        return None
    points = sorted({w for s in spectra for w in s.wavelengths if lo <= w <= hi})
    if not points:
        points = [lo] if lo == hi else [lo, hi]
    return np.asarray(points, dtype=np.float64)


def _fit_variable(variable_id: str, rows: list[tuple[str, Spectrum, float]]) -> VariableModel | None:
    if not rows:
        return None
    rows = sorted(rows, key=lambda r: r[0])  # id order makes training deterministic
    grid = _common_grid([spec for _, spec, _ in rows])
    if grid is None:
        return None
    matrix = np.vstack([resample(spec, grid) for _, spec, _ in rows])
    return VariableModel(
        variable_id=variable_id,
        grid=grid,
        matrix=matrix,
        values=np.asarray([v for _, _, v in rows], dtype=np.float64),
        sample_ids=tuple(r[0] for r in rows),
    )


class PredictService:
    def __init__(self, store: Store, packages_dir: str | Path | None = None):
        self.store = store
        self.packages_dir = Path(packages_dir) if packages_dir else None

    # ------------------------------------------------------------------ train

    def train(self, model_id: str) -> TrainedModel:
        """(Re)fit from the current lab collection and persist the summary."""
        meta, _state = self.store.get_model(model_id)
        if meta.kind == "external":
            return self._external_trained(meta)
        labs = self.store.all_samples("lab")
        per_variable: dict[str, list[tuple[str, Spectrum, float]]] = {}
        for sample in labs:
            for m in sample.measurements:
                per_variable.setdefault(m.variable_id, []).append(
                    (sample.id, sample.spectrum, m.value)
                )
        declared = meta.hyperparameters.get("variables")
        if declared:
            wanted = {str(v) for v in declared}
            per_variable = {k: rows for k, rows in per_variable.items() if k in wanted}
        variables: dict[str, VariableModel] = {}
        untrainable: set[str] = set()
        for variable_id, rows in per_variable.items():
            fitted = _fit_variable(variable_id, rows)
            if fitted is not None:
                variables[variable_id] = fitted
            else:
                untrainable.add(variable_id)
        trained = TrainedModel(
            meta=PredictorMeta(
                id=meta.id,
                name=meta.name,
                kind=meta.kind,
                hyperparameters=meta.hyperparameters,
                trained_variables=frozenset(variables),
            ),
            variables=variables,
            untrainable=frozenset(untrainable),
        )
        self.store.put_model(
            trained.meta,
            state={
                v.variable_id: {"lo": v.lo, "hi": v.hi, "n": len(v.sample_ids)}
                for v in variables.values()
            },
        )
        return trained

    def _external_trained(self, meta: PredictorMeta) -> TrainedModel:
        manifest = meta.hyperparameters.get("manifest")
        if not isinstance(manifest, dict):
            raise errors.BadManifest(f"model {meta.id!r} carries no manifest")
        declared = manifest.get("variables")
        if not isinstance(declared, list) or not declared:
            raise errors.BadManifest("manifest must declare a non-empty variables list")
        trained = PredictorMeta(
            id=meta.id,
            name=meta.name,
            kind=meta.kind,
            hyperparameters=meta.hyperparameters,
            trained_variables=frozenset(str(v) for v in declared),
        )
        self.store.put_model(trained)
        return TrainedModel(meta=trained)

    # ---------------------------------------------------------------- predict

    def _estimate(self, trained: TrainedModel, vm: VariableModel, spectrum: Spectrum) -> float:
        if trained.meta.kind == "mean":
            # the estimate is spectrum-free, so coverage is not a concern
            return float(np.mean(vm.values))
        if spectrum.wl_min > vm.lo or spectrum.wl_max < vm.hi:
            raise errors.SpectrumOutOfRange(
                f"input covers [{spectrum.wl_min}, {spectrum.wl_max}] but"
                f" variable {vm.variable_id!r} needs [{vm.lo}, {vm.hi}]"
            )
        # knn: nearest rows by Euclidean distance, sample id breaks ties;
        # the chosen neighbours are averaged in id order so that k = n
        # reproduces the plain mean bit for bit
        k = min(trained.meta.k, len(vm.sample_ids))
        query = resample(spectrum, vm.grid)
        deltas = vm.matrix - query[np.newaxis, :]
        distances = np.sqrt(np.sum(deltas * deltas, axis=1))
        order = sorted(range(len(vm.sample_ids)), key=lambda i: (distances[i], vm.sample_ids[i]))
        chosen = sorted(order[:k])
        return float(np.mean(vm.values[chosen]))

    def predict(
        self,
        model_id: str,
        spectrum: Spectrum,
        variable_ids: list[str] | None = None,
        trained: TrainedModel | None = None,
    ) -> dict[str, float]:
        """Estimates for one spectrum; {variable_id: value}.

        With an explicit variable list, failures are raised; by default every
        trained variable the spectrum can serve is returned.
        """
        trained = trained or self.train(model_id)
        if trained.meta.kind == "external":
            return self._run_external(trained.meta, spectrum, variable_ids)
        if variable_ids is None:
            out = {}
            for variable_id, vm in sorted(trained.variables.items()):
                try:
                    out[variable_id] = self._estimate(trained, vm, spectrum)
                except errors.SpectrumOutOfRange:
                    continue
            return out
        out = {}
        for variable_id in variable_ids:
            vm = trained.variables.get(variable_id)
            if vm is None:
                if variable_id in trained.untrainable:
                    raise errors.EmptyWavelengthIntersection(
                        f"training spectra for {variable_id!r} share no wavelength span"
                    )
                raise errors.NoTrainingData(variable_id)
            out[variable_id] = self._estimate(trained, vm, spectrum)
        return out

    # ------------------------------------------------------------------ batch

    def run_batch(
        self,
        model_id: str,
        sample_ids: list[str] | None = None,
        site_id: str | None = None,
    ) -> dict:
        """Estimate every trained variable for the targeted drone samples and
        store the results. Replaces earlier estimates by the same model.

        The target is one of: explicit sample ids, every sample of one site,
        or (default) the whole drone collection.
        """
        if sample_ids is not None and site_id is not None:
            raise errors.InvalidInput("target by sample ids or by site, not both")
        trained = self.train(model_id)
        if sample_ids is not None:
            drones = [self.store.get_sample("drone", sid) for sid in sample_ids]
        elif site_id is not None:
            self.store.get_site(site_id)
            drones = [d for d in self.store.all_samples("drone") if site_id in d.site_ids]
        else:
            drones = self.store.all_samples("drone")
        predicted = 0
        skipped = 0
        batch: list[Prediction] = []
        for sample in drones:
            try:
                estimates = self.predict(model_id, sample.spectrum, trained=trained)
            except errors.PlatformError:
                skipped += 1
                continue
            if not estimates:
                skipped += 1
                continue
            for variable_id, value in estimates.items():
                batch.append(
                    Prediction(
                        drone_sample_id=sample.id,
                        model_id=model_id,
                        variable_id=variable_id,
                        value=value,
                    )
                )
            predicted += 1
        self.store.upsert_predictions(batch)
        return {
            "model_id": model_id,
            "samples_predicted": predicted,
            "samples_skipped": skipped,
            "predictions_written": len(batch),
            "variables": sorted(trained.meta.trained_variables),
        }

    # --------------------------------------------------------------- external

    def _run_external(
        self, meta: PredictorMeta, spectrum: Spectrum, variable_ids: list[str] | None
    ) -> dict[str, float]:
        manifest = meta.hyperparameters.get("manifest") or {}
        command = manifest.get("command")
        if isinstance(command, str):
            command = shlex.split(command)
        if not isinstance(command, list) or not command:
            raise errors.BadManifest("manifest command must be a non-empty list")
        cwd = None
        if self.packages_dir is not None:
            candidate = self.packages_dir / meta.id
            if candidate.is_dir():
                cwd = str(candidate)
        payload = json.dumps(
            {"wavelengths": list(spectrum.wavelengths), "values": list(spectrum.values)}
        )
        try:
            proc = subprocess.run(
                [str(c) for c in command],
                input=payload.encode(),
                capture_output=True,
                timeout=EXTERNAL_TIMEOUT,
                cwd=cwd,
            )
        except (subprocess.TimeoutExpired, OSError) as exc:
            raise errors.BadManifest(f"external predictor failed to run: {exc}") from None
        if proc.returncode != 0:
            raise errors.BadManifest(
                f"external predictor exited {proc.returncode}:"
                f" {proc.stderr.decode(errors='replace')[:500]}"
            )
        try:
            raw = json.loads(proc.stdout.decode())
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise errors.BadManifest("external predictor wrote non-JSON output") from None
        if not isinstance(raw, dict):
            raise errors.BadManifest("external predictor must write a JSON object")
        declared = meta.trained_variables
        out = {}
        for variable_id, value in raw.items():
            if variable_id not in declared:
                continue
            try:
                out[variable_id] = float(value)
            except (TypeError, ValueError):
                raise errors.BadManifest(
                    f"external predictor wrote non-numeric value for {variable_id!r}"
                ) from None
            if not np.isfinite(out[variable_id]):
                raise errors.BadManifest(f"external predictor wrote non-finite {variable_id!r}")
        if variable_ids is not None:
            missing = [v for v in variable_ids if v not in out]
            if missing:
                raise errors.NoTrainingData(missing[0])
            out = {v: out[v] for v in variable_ids}
        return out
