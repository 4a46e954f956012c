"""Dataset layouts, splits and the staged random sampler.

Layouts under a root directory::

    paired     fixed_images/, moving_images/ [, fixed_labels/, moving_labels/]
    unpaired   images/ [, labels/]
    grouped    images/<group>/ [, labels/<group>/]

Images are ``.nii`` or ``.nii.gz``. A case's labels are either a single
file with the image's name or files ``<id>_label<k>``.

All randomness comes from :class:`SplitMix64` so epoch sequences are
reproducible from ``(seed, epoch)`` alone. Integers in ``[0, n)`` are drawn
as ``next() % n`` and shuffles are Fisher-Yates from the last position down.
"""
import os
import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import BadSpec, Empty, GroupTooSmall, LayoutMismatch

MASK64 = (1 << 64) - 1
MODES = ("paired", "unpaired", "grouped")
OPTIONS = ("forward", "backward", "unconstrained")


class SplitMix64:
    def __init__(self, seed):
        self.state = int(seed) & MASK64

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n):
        if n <= 0:
            raise ValueError("below() needs a positive bound")
        return self.next() % n

    def shuffle(self, items):
        items = list(items)
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


@dataclass(frozen=True)
class CaseRecord:
    id: str
    image: str
    labels: tuple = ()
    group: str = None
    name: str = ""  # image path relative to the layout root, extension stripped

    @property
    def label_count(self):
        return len(self.labels)


@dataclass(frozen=True)
class DatasetIndex:
    mode: str
    records: tuple
    pairs: tuple = ()  # paired mode: (fixed, moving) records
    groups: dict = field(default_factory=dict)

    def units(self):
        """Split units: pairs, single images, or group ids."""
        if self.mode == "paired":
            return list(self.pairs)
        if self.mode == "unpaired":
            return list(self.records)
        return sorted(self.groups)

    def subset(self, units):
        if self.mode == "paired":
            pairs = tuple(units)
            return DatasetIndex("paired", tuple(r for p in pairs for r in p), pairs)
        if self.mode == "unpaired":
            return DatasetIndex("unpaired", tuple(units))
        groups = {g: self.groups[g] for g in units}
        return DatasetIndex("grouped", tuple(r for g in units for r in groups[g]), (), groups)


@dataclass(frozen=True)
class SamplerConfig:
    seed: int = 0
    intra_group_option: str = "unconstrained"
    label_stage: bool = True

    def __post_init__(self):
        if self.intra_group_option not in OPTIONS:
            raise BadSpec(f"unknown intra-group option {self.intra_group_option!r}")


@dataclass(frozen=True)
class SamplePair:
    fixed: CaseRecord
    moving: CaseRecord
    fixed_label: int = None
    moving_label: int = None


_EXT = re.compile(r"\.nii(\.gz)?$")


def _stem(filename):
    return _EXT.sub("", filename)


def _images(folder):
    if not os.path.isdir(folder):
        return {}
    return {_stem(f): os.path.join(folder, f) for f in sorted(os.listdir(folder))
            if _EXT.search(f) and os.path.isfile(os.path.join(folder, f))}


def _label_files(folder, stem):
    files = _images(folder)
    if stem in files:
        return (files[stem],)
    pattern = re.compile(re.escape(stem) + r"_label(\d+)$")
    found = sorted((int(m.group(1)), path) for key, path in files.items()
                   if (m := pattern.match(key)))
    return tuple(path for _, path in found)


def _records(root, image_dir, label_dir, group=None):
    records = []
    for stem, path in sorted(_images(image_dir).items()):
        labels = _label_files(label_dir, stem) if os.path.isdir(label_dir) else ()
        name = os.path.relpath(os.path.join(image_dir, stem), root).replace(os.sep, "/")
        cid = stem if group is None else f"{group}/{stem}"
        records.append(CaseRecord(cid, path, labels, group, name))
    return records


def scan_layout(root, mode):
    """Index a dataset directory in one of the three layouts."""
    if mode not in MODES:
        raise BadSpec(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    if not os.path.isdir(root):
        raise Empty(f"layout root {root} does not exist")
    j = os.path.join
    if mode == "paired":
        fixed = _records(root, j(root, "fixed_images"), j(root, "fixed_labels"))
        moving = _records(root, j(root, "moving_images"), j(root, "moving_labels"))
        fids, mids = [r.id for r in fixed], [r.id for r in moving]
        if fids != mids:
            unmatched = sorted(set(fids) ^ set(mids))
            raise LayoutMismatch(f"unmatched paired images: {', '.join(unmatched)}")
        if not fixed:
            raise Empty(f"no images under {root}/fixed_images")
        pairs = tuple(zip(fixed, moving))
        return DatasetIndex("paired", tuple(fixed + moving), pairs)
    if mode == "unpaired":
        records = _records(root, j(root, "images"), j(root, "labels"))
        if len(records) < 2:
            raise Empty(f"unpaired layout under {root}/images needs at least 2 images")
        return DatasetIndex("unpaired", tuple(records))
    image_root = j(root, "images")
    if not os.path.isdir(image_root):
        raise Empty(f"no images directory under {root}")
    groups = {}
    for group in sorted(os.listdir(image_root)):
        if not os.path.isdir(j(image_root, group)):
            continue
        recs = _records(root, j(image_root, group), j(root, "labels", group), group)
        if len(recs) < 2:
            raise GroupTooSmall(f"group {group!r} has {len(recs)} image(s); at least 2 are needed")
        groups[group] = tuple(recs)
    if not groups:
        raise Empty(f"no groups under {image_root}")
    return DatasetIndex("grouped", tuple(r for g in groups for r in groups[g]), (), groups)


def _largest_remainder(ratios, n):
    exact = [r * n for r in ratios]
    sizes = [int(e) for e in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split(index, ratio=None, kfold=None, seed=0):
    """Seeded partition of an index's split units.

    ``ratio=(train, val, test)`` returns three indices; ``kfold=k`` returns
    ``k`` ``(train, validation)`` pairs whose validation parts tile the units.
    Whole groups move together in grouped mode.
    """
    if (ratio is None) == (kfold is None):
        raise BadSpec("give exactly one of ratio or kfold")
    units = SplitMix64(seed).shuffle(index.units())
    n = len(units)
    if ratio is not None:
        ratio = tuple(float(r) for r in ratio)
        if len(ratio) != 3 or any(r < 0 for r in ratio) or abs(sum(ratio) - 1.0) > 1e-9:
            raise BadSpec(f"ratios must be three non-negative numbers summing to 1, got {ratio}")
        sizes = _largest_remainder(ratio, n)
        parts, start = [], 0
        for size in sizes:
            parts.append(index.subset(units[start:start + size]))
            start += size
        return tuple(parts)
    if not isinstance(kfold, int) or not 2 <= kfold <= n:
        raise BadSpec(f"kfold must be an integer in [2, {n}], got {kfold!r}")
    folds, start = [], 0
    for i in range(kfold):
        size = n // kfold + (1 if i < n % kfold else 0)
        folds.append(units[start:start + size])
        start += size
    return [(index.subset([u for j, f in enumerate(folds) if j != i for u in f]),
             index.subset(fold)) for i, fold in enumerate(folds)]


def _label_draw(rng, record, enabled):
    if not enabled or record.label_count == 0:
        return None
    return rng.below(record.label_count)


def _admissible(size, option):
    if option == "forward":
        return [(m, f) for m in range(size) for f in range(size) if m < f]
    if option == "backward":
        return [(m, f) for m in range(size) for f in range(size) if m > f]
    return [(m, f) for m in range(size) for f in range(size) if m != f]


def epoch_pairs(index, config, epoch):
    """Ordered sample pairs for one epoch; see the module docstring for the RNG."""
    rng = SplitMix64(config.seed ^ epoch)
    labels = config.label_stage
    out = []
    if index.mode == "paired":
        for fixed, moving in rng.shuffle(index.pairs):
            if labels and fixed.label_count and fixed.label_count == moving.label_count:
                k = rng.below(fixed.label_count)
                out.append(SamplePair(fixed, moving, k, k))
            else:
                fl = _label_draw(rng, fixed, labels)
                out.append(SamplePair(fixed, moving, fl, _label_draw(rng, moving, labels)))
        return out
    if index.mode == "unpaired":
        order = rng.shuffle(index.records)
        draws = [(order[i], order[i + 1]) for i in range(0, len(order) - 1, 2)]
        if len(order) % 2:
            moving = order[-1]
            others = order[:-1]
            draws.append((moving, others[rng.below(len(others))]))
        for moving, fixed in draws:
            ml = _label_draw(rng, moving, labels)
            out.append(SamplePair(fixed, moving, _label_draw(rng, fixed, labels), ml))
        return out
    names = sorted(index.groups)
    for _ in range(len(index.records)):
        members = index.groups[names[rng.below(len(names))]]
        choices = _admissible(len(members), config.intra_group_option)
        m, f = choices[rng.below(len(choices))]
        moving, fixed = members[m], members[f]
        ml = _label_draw(rng, moving, labels)
        out.append(SamplePair(fixed, moving, _label_draw(rng, fixed, labels), ml))
    return out


def sampler_report(index, config, epochs):
    """Counts per group, image, label channel and ordered pair over ``epochs`` epochs."""
    if epochs < 1:
        raise BadSpec("epochs must be >= 1")
    groups, images, label_counts, pairs = Counter(), Counter(), Counter(), Counter()
    for epoch in range(epochs):
        for s in epoch_pairs(index, config, epoch):
            if index.mode == "grouped":
                groups[s.fixed.group] += 1
            images[s.fixed.name] += 1
            images[s.moving.name] += 1
            for rec, k in ((s.fixed, s.fixed_label), (s.moving, s.moving_label)):
                if k is not None:
                    label_counts[f"{rec.name}#{k}"] += 1
            pairs[f"{s.moving.name}->{s.fixed.name}"] += 1
    return {"mode": index.mode, "seed": config.seed, "epochs": epochs,
            "group_counts": dict(sorted(groups.items())),
            "image_counts": dict(sorted(images.items())),
            "label_counts": dict(sorted(label_counts.items())),
            "pair_counts": dict(sorted(pairs.items()))}
