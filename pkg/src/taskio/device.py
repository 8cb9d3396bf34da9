"""Parametric throughput/latency model of a storage device.

The model describes a device as a shared-rate server: up to ``max_depth``
requests are serviced concurrently, splitting the class bandwidth (read or
write) evenly among the active requests.  Effective write bandwidth can be
reduced for large blocks through a piecewise-linear degradation curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

MIB = 1024 * 1024

#: Calibration points for an Intel 905P Optane SSD: 1 MiB random reads
#: sustain ~2548 MiB/s and 4 KiB random writes ~2255 MiB/s at queue
#: depths 1-4.
OPTANE_905P_READ_MIB_S = 2548.0
OPTANE_905P_WRITE_MIB_S = 2255.0


class DeviceModelError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceModel:
    """Throughput/latency description of a (simulated) storage device."""

    read_bw_mib_s: float
    write_bw_mib_s: float
    base_latency_us: float = 0.0
    max_depth: int = 4
    # (block_kib, multiplier) control points; multiplier 1.0 below the
    # first point, clamped at the last point, linear in block size between.
    write_degradation: tuple[tuple[float, float], ...] = field(
        default_factory=lambda: ((1024.0, 1.0), (8192.0, 0.6))
    )

    def __post_init__(self):
        if self.read_bw_mib_s <= 0 or self.write_bw_mib_s <= 0:
            raise DeviceModelError("bandwidth must be positive")
        if self.base_latency_us < 0:
            raise DeviceModelError("base latency must be non-negative")
        if self.max_depth < 1:
            raise DeviceModelError("max_depth must be >= 1")
        points = tuple(sorted(self.write_degradation))
        for _, mult in points:
            if not 0.0 < mult <= 1.0:
                raise DeviceModelError("degradation multipliers must be in (0, 1]")
        object.__setattr__(self, "write_degradation", points)

    @classmethod
    def optane_905p(cls) -> "DeviceModel":
        """Model calibrated from the Optane 905P fio profile."""
        return cls(
            read_bw_mib_s=OPTANE_905P_READ_MIB_S,
            write_bw_mib_s=OPTANE_905P_WRITE_MIB_S,
            base_latency_us=0.0,
            max_depth=4,
        )

    def write_multiplier(self, block_bytes: int) -> float:
        """Piecewise-linear write-bandwidth multiplier for a block size."""
        if not self.write_degradation:
            return 1.0
        kib = block_bytes / 1024.0
        points = self.write_degradation
        if kib <= points[0][0]:
            return points[0][1]
        if kib >= points[-1][0]:
            return points[-1][1]
        for (x0, y0), (x1, y1) in zip(points, points[1:]):
            if x0 <= kib <= x1:
                frac = (kib - x0) / (x1 - x0)
                return y0 + frac * (y1 - y0)
        return points[-1][1]

    def class_bw_bytes_s(self, kind: str, block_bytes: int) -> float:
        """Aggregate bandwidth in bytes/s for a request class."""
        if kind == "read":
            return self.read_bw_mib_s * MIB
        if kind == "write":
            return self.write_bw_mib_s * MIB * self.write_multiplier(block_bytes)
        raise DeviceModelError(f"unknown request kind {kind!r}")

    def to_file(self, path: str) -> None:
        degr = ",".join(f"{int(k)}:{m}" for k, m in self.write_degradation)
        with open(path, "w") as fh:
            fh.write(f"read_bw_mib_s={self.read_bw_mib_s}\n")
            fh.write(f"write_bw_mib_s={self.write_bw_mib_s}\n")
            fh.write(f"base_latency_us={self.base_latency_us}\n")
            fh.write(f"max_depth={self.max_depth}\n")
            fh.write(f"write_degradation={degr}\n")

    @classmethod
    def from_file(cls, path: str) -> "DeviceModel":
        """Parse a line-oriented ``key=value`` device model file."""
        fields: dict[str, object] = {}
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise DeviceModelError(f"{path}:{lineno}: expected key=value")
                key, value = line.split("=", 1)
                key = key.strip()
                value = value.strip()
                try:
                    if key in ("read_bw_mib_s", "write_bw_mib_s", "base_latency_us"):
                        fields[key] = float(value)
                    elif key == "max_depth":
                        fields[key] = int(value)
                    elif key == "write_degradation":
                        points = []
                        for chunk in value.split(","):
                            if not chunk:
                                continue
                            size_kib, mult = chunk.split(":")
                            points.append((float(size_kib), float(mult)))
                        fields[key] = tuple(points)
                    else:
                        raise DeviceModelError(f"{path}:{lineno}: unknown key {key!r}")
                except DeviceModelError:
                    raise
                except ValueError as exc:
                    raise DeviceModelError(f"{path}:{lineno}: {exc}") from None
        try:
            return cls(**fields)  # type: ignore[arg-type]
        except TypeError as exc:
            raise DeviceModelError(str(exc)) from None
