'''
INT8 post-training quantization toolchain and inference engine for 3D
convolutional segmentation networks.
'''
__version__ = '0.1.0'
