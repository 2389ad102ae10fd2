"""
chaotherm - 混沌多体系统随机矩阵系综的热化数值实验
"""
__version__ = "0.1.0"
