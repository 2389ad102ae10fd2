"""
实验编排：运行配置、预设、运行与验收
"""
