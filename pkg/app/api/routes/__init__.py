# CLI route modules
from . import bench, fit, loop, mask, plan, render, score
