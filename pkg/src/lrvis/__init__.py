"""Software renderer and flow tracer for trivariate locally refined
spline fields.

Submodules:
    lr_core     LR B-spline volumes, validation, Bezier extraction
    accel       element lookup structures (linear scan, grid, octree,
                k-d tree/forest) and micro-benchmarks
    volren      CPU ray caster with front-to-back compositing
    flow        Runge-Kutta streamline tracing and error metrics
    io_formats  dataset/scene/STL/image readers and writers, synthetic
                dataset generation
    cli         command-line entry point
    server      HTTP render service
"""

from . import accel, flow, io_formats, lr_core, volren

__version__ = "0.1.0"

__all__ = ["accel", "flow", "io_formats", "lr_core", "volren",
           "__version__"]
