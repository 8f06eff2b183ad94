"""Per-port, per-cycle bit-pattern sequences and their file formats."""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field

_COL_RE = re.compile(r"^(.*)\[(\d+)\]$")


@dataclass
class Trace:
    """``ports[name][cycle]`` is an int, or a tuple of ints for a vector port."""

    ports: dict = field(default_factory=dict)

    @property
    def cycles(self) -> int:
        lengths = {len(v) for v in self.ports.values()}
        if len(lengths) > 1:
            raise ValueError(f"ports disagree on cycle count: {sorted(lengths)}")
        return lengths.pop() if lengths else 0

    def __getitem__(self, name):
        return self.ports[name]

    def __eq__(self, other):
        return isinstance(other, Trace) and self.ports == other.ports

    def slice(self, start: int, stop=None) -> "Trace":
        return Trace({k: list(v[start:stop]) for k, v in self.ports.items()})

    def select(self, names) -> "Trace":
        return Trace({k: self.ports[k] for k in names})

    def to_dict(self, widths: dict | None = None) -> dict:
        def fmt(x, name):
            w = (widths or {}).get(name)
            digits = max(1, (w + 3) // 4) if w else 1
            if isinstance(x, tuple):
                return [f"{v:0{digits}x}" for v in x]
            return f"{x:0{digits}x}"
        return {"cycles": self.cycles,
                "ports": {k: [fmt(x, k) for x in v] for k, v in self.ports.items()}}

    def to_json(self, widths: dict | None = None) -> str:
        return json.dumps(self.to_dict(widths), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Trace":
        def parse(x):
            if isinstance(x, list):
                return tuple(int(v, 16) for v in x)
            return int(x, 16)
        return cls({k: [parse(x) for x in v] for k, v in d["ports"].items()})

    @classmethod
    def from_json(cls, text: str) -> "Trace":
        return cls.from_dict(json.loads(text))

    def to_csv(self, widths: dict | None = None) -> str:
        """One hex word per column; vector ports become ``name[i]`` columns."""
        cols = []
        for name, seq in self.ports.items():
            if seq and isinstance(seq[0], tuple):
                cols.extend((name, i) for i in range(len(seq[0])))
            else:
                cols.append((name, None))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cycle"] + [n if i is None else f"{n}[{i}]" for n, i in cols])
        for c in range(self.cycles):
            row = [str(c)]
            for name, i in cols:
                x = self.ports[name][c]
                v = x if i is None else x[i]
                width = (widths or {}).get(name)
                digits = max(1, (width + 3) // 4) if width else 1
                row.append(f"{v:0{digits}x}")
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trace":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            return cls()
        header = rows[0][1:]
        layout = []
        for h in header:
            m = _COL_RE.match(h)
            layout.append((m.group(1), int(m.group(2))) if m else (h, None))
        ports: dict = {}
        for name, i in layout:
            ports.setdefault(name, [])
        for row in rows[1:]:
            vec: dict = {}
            for (name, i), cell in zip(layout, row[1:]):
                v = int(cell, 16)
                if i is None:
                    ports[name].append(v)
                else:
                    vec.setdefault(name, {})[i] = v
            for name, parts in vec.items():
                ports[name].append(tuple(parts[k] for k in sorted(parts)))
        return cls(ports)
