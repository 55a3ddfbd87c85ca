import torch

# Bitwise reproducibility across reruns; the models are tiny anyway.
torch.set_num_threads(1)
