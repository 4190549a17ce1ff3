"""Text formats for datasets and models.

Dataset lines look like ``1,3 | 0:1 7:0.5 9``: comma-separated class ids
(possibly none), a bar, then ``index[:value]`` tokens with value defaulting
to 1.  Lines starting with ``#`` are comments except the directives
``#n=<features>``, ``#l=<classes>`` and ``#names=<a,b,...>``.

Models are line-oriented text with every float written at 17 significant
digits and a trailing sha256 checksum line.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from typing import IO, Iterable

import numpy as np

from sl1max.core import Dataset, DistributionKind, Example, SparseVector, WeightMatrix
from sl1max.ensemble import BinaryPairModel, EnsembleModel
from sl1max.errors import ChecksumMismatch, EmptyFile, InputError, MalformedLine, ValueOutOfRange, VersionMismatch
from sl1max.trainers import TrainedModel

MAGIC = "SL1MAX-MODEL"
FORMAT_VERSION = 1


class NonBinaryFeatureWarning(UserWarning):
    pass


def _lines(source) -> Iterable[str]:
    if isinstance(source, str):
        return source.splitlines()
    return source


def parse_dataset(source, num_features: int | None = None, num_classes: int | None = None) -> Dataset:
    """Parse the sparse line format from a string or an iterable of lines."""
    n_hdr = num_features
    l_hdr = num_classes
    names = None
    rows = []
    non_binary = False
    max_j = -1
    max_c = -1
    for line_no, raw in enumerate(_lines(source), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, eq, val = line[1:].partition("=")
            key = key.strip()
            if eq and key in ("n", "l"):
                try:
                    v = int(val)
                except ValueError:
                    raise MalformedLine(line_no, f"bad directive {line!r}") from None
                if key == "n" and n_hdr is None:
                    n_hdr = v
                elif key == "l" and l_hdr is None:
                    l_hdr = v
            elif eq and key == "names":
                names = tuple(s.strip() for s in val.split(","))
            continue
        head, bar, tail = line.partition("|")
        if not bar:
            raise MalformedLine(line_no, "missing '|' separator")
        try:
            labels = frozenset(int(t) for t in head.split(",") if t.strip())
        except ValueError:
            raise MalformedLine(line_no, f"bad label list {head.strip()!r}") from None
        if any(c < 0 for c in labels):
            raise MalformedLine(line_no, "negative class id")
        pairs = {}
        for tok in tail.split():
            j_s, colon, v_s = tok.partition(":")
            try:
                j = int(j_s)
                v = float(v_s) if colon else 1.0
            except ValueError:
                raise MalformedLine(line_no, f"bad feature token {tok!r}") from None
            if j < 0:
                raise MalformedLine(line_no, f"negative feature index {j}")
            if j in pairs:
                raise MalformedLine(line_no, f"duplicate feature index {j}")
            if not 0.0 <= v <= 1.0:
                raise ValueOutOfRange(line_no, f"value {v} of feature {j} outside [0, 1]")
            if v != 0.0:
                pairs[j] = v
                if v != 1.0:
                    non_binary = True
        if pairs:
            max_j = max(max_j, max(pairs))
        if labels:
            max_c = max(max_c, max(labels))
        rows.append((line_no, labels, pairs))
    if not rows:
        raise EmptyFile("no examples in input")
    n = n_hdr if n_hdr is not None else max_j + 1
    l = l_hdr if l_hdr is not None else max(max_c + 1, len(names) if names else 0)
    if names is not None and len(names) != l:
        raise InputError(f"#names lists {len(names)} classes but l={l}")
    examples = []
    for line_no, labels, pairs in rows:
        if pairs and max(pairs) >= n:
            raise MalformedLine(line_no, f"feature index {max(pairs)} >= n={n}")
        if labels and max(labels) >= l:
            raise MalformedLine(line_no, f"class id {max(labels)} >= l={l}")
        examples.append(Example(SparseVector.from_pairs(pairs.items()), labels))
    if non_binary:
        warnings.warn("non-binary feature values: the update bound is no longer tight", NonBinaryFeatureWarning,
                      stacklevel=2)
    return Dataset(tuple(examples), max(l, 1), max(n, 1), names)


def read_dataset(path, **kw) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh, **kw)


def format_dataset(data: Dataset) -> str:
    """Canonical text form; ``parse_dataset`` reads it back to an equal dataset."""
    out = [f"#n={data.num_features}", f"#l={data.num_classes}"]
    if data.class_names is not None:
        out.append("#names=" + ",".join(data.class_names))
    for ex in data.examples:
        labels = ",".join(str(c) for c in sorted(ex.labels))
        feats = " ".join(str(j) if v == 1.0 else f"{j}:{v!r}" for j, v in ex.x)
        out.append(f"{labels} | {feats}".rstrip())
    return "\n".join(out) + "\n"


def write_dataset(data: Dataset, path_or_stream):
    text = format_dataset(data)
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(text)
    else:
        with open(path_or_stream, "w", encoding="utf-8") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# models


def _g(x: float) -> str:
    return "%.17g" % x


def serialize_model(model) -> str:
    ens = isinstance(model, EnsembleModel)
    kind = ("ensemble-" if ens else "") + model.kind.value
    lines = [
        f"{MAGIC} {FORMAT_VERSION}",
        f"kind {kind}",
        f"classes {model.num_classes}",
        f"features {model.num_features}",
        f"beta {_g(model.config.get('beta', float('nan')))}",
        f"beta_scaling {model.config.get('beta_scaling', '-')}",
        f"rounds {getattr(model, 'rounds', 0)}",
        "class_names " + json.dumps(list(model.class_names) if model.class_names else None),
        "config " + json.dumps(model.config, sort_keys=True),
    ]
    if ens:
        lines.append(f"threshold {_g(model.threshold)}")
        body = []
        for mb in model.members:
            if mb.constant_negative:
                body.append(f"constneg {mb.class_index}")
            for tag, row in (("pos", mb.lambda_pos), ("neg", mb.lambda_neg)):
                for j in sorted(row):
                    body.append(f"w {mb.class_index}{tag[0]} {j} {_g(row[j])}")
    else:
        body = []
        for c, row in enumerate(model.weights.rows):
            for j in sorted(row):
                body.append(f"w {c} {j} {_g(row[j])}")
    lines.append(f"weights {sum(1 for b in body if b.startswith('w '))}")
    lines.extend(body)
    if not ens and model.kind is DistributionKind.CLASS_CONDITIONAL:
        lines.extend(f"lognorm {c} {_g(v)}" for c, v in enumerate(model.log_norm_per_class))
        lines.extend(f"logprior {c} {_g(v)}" for c, v in enumerate(model.log_prior))
    digest = hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
    lines.append(f"checksum sha256:{digest}")
    return "\n".join(lines) + "\n"


def parse_model(text: str):
    lines = text.splitlines()
    if not lines or not lines[0].startswith(MAGIC + " "):
        raise InputError("not a model file")
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise InputError("bad model header") from None
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model format version {version}, expected {FORMAT_VERSION}")
    if not lines[-1].startswith("checksum sha256:"):
        raise ChecksumMismatch("missing checksum line")
    digest = hashlib.sha256("\n".join(lines[:-1]).encode("utf-8")).hexdigest()
    if lines[-1].split(":", 1)[1].strip() != digest:
        raise ChecksumMismatch("model body does not match its checksum")
    try:
        return _parse_checked(lines[1:-1])
    except (ValueError, IndexError, KeyError) as exc:
        raise InputError(f"malformed model file: {exc}") from None


def _parse_checked(lines):
    hdr = {}
    it = iter(enumerate(lines))
    for _, line in it:
        key, _, val = line.partition(" ")
        hdr[key] = val
        if key == "weights":
            break
    kind = hdr["kind"]
    l = int(hdr["classes"])
    n = int(hdr["features"])
    names = json.loads(hdr["class_names"])
    names = tuple(names) if names else None
    config = json.loads(hdr["config"])
    rest = [line for _, line in it]
    if kind.startswith("ensemble-"):
        base = DistributionKind(kind[len("ensemble-"):])
        pos = [dict() for _ in range(l)]
        neg = [dict() for _ in range(l)]
        const = set()
        for line in rest:
            parts = line.split()
            if parts[0] == "constneg":
                const.add(int(parts[1]))
            elif parts[0] == "w":
                c, tag = int(parts[1][:-1]), parts[1][-1]
                (pos if tag == "p" else neg)[c][int(parts[2])] = float(parts[3])
            else:
                raise ValueError(f"unexpected line {line!r}")
        members = tuple(BinaryPairModel(c, pos[c], neg[c], base, n, c in const) for c in range(l))
        return EnsembleModel(members, base, n, float(hdr["threshold"]), config, names)
    kind = DistributionKind(kind)
    rows = [dict() for _ in range(l)]
    lognorm = np.full(l, np.nan)
    logprior = np.full(l, np.nan)
    for line in rest:
        parts = line.split()
        if parts[0] == "w":
            rows[int(parts[1])][int(parts[2])] = float(parts[3])
        elif parts[0] == "lognorm":
            lognorm[int(parts[1])] = float(parts[2])
        elif parts[0] == "logprior":
            logprior[int(parts[1])] = float(parts[2])
        else:
            raise ValueError(f"unexpected line {line!r}")
    classcond = kind is DistributionKind.CLASS_CONDITIONAL
    if classcond and (np.isnan(lognorm).any() or np.isnan(logprior).any()):
        raise ValueError("class-conditional model without its normalizer footer")
    return TrainedModel(WeightMatrix(rows, kind, n), kind, logprior if classcond else None,
                        lognorm if classcond else None, config, int(hdr["rounds"]), names)


def write_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_model(model))


def read_model(path):
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())
