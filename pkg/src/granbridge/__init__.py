"""Granularity bridge toolkit: merge trunk/whole-tree predictions into coarse
"Tree" targets, evaluate them COCO-style, and compute distillation losses."""

__version__ = "0.1.0"
