import torch

# bitwise reproducibility promises hold in single-threaded mode
torch.set_num_threads(1)
