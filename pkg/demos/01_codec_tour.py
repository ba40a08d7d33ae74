"""
Storing one image as a coded latent pyramid
===========================================

Fit latents and two tiny networks to a single toy image, quantize everything,
write a ``.rudd`` stream and see where the bits went.
"""

import numpy as np
import torch

from rudd.codec import bpc, decode_dataset, encode_dataset, label_rate_bits, raw_bpc, soft_label_rate_bound
from rudd.data import generate_toy
from rudd.distill import DistillConfig, init_state, run_phase1
from rudd.distill.algorithm import decode_images, run_phase3

torch.set_num_threads(1)

# a 16x16 toy image: one of four shape classes
data = generate_toy(4, 10, 16, 16, seed=0)
target = data.images[0]
print("image", target.shape, "label", data.labels[0])

# fit: rate of the noisy latents + beta * squared error of the decoded image
cfg = DistillConfig(spc=1, scales=4, beta=1e6, init_steps=1500, seed=0)
state = init_state(1, 16, 16, cfg)
state = run_phase1(state, data, cfg, targets=np.array([0]), log=print)

# round latents, grid-quantize the networks and entropy-code the lot
ds, report = run_phase3(state, cfg)
print("network steps: entropy", report.entropy_steps, "decoder", report.decoder_steps)
stream = encode_dataset(ds)
print(f"{len(stream.data)} bytes, {bpc(stream):.0f} bits per class, raw {raw_bpc(16, 16)}")
for key, value in stream.allocation.to_dict().items():
    print(f"  {key:<18} {value}")

# decoding is exact; the picture is close to the original
back, _ = decode_dataset(stream.data)
images, _ = decode_images(back)
print("reconstruction MSE", float(((images[0] - target) ** 2).mean()))

# labels are cheap when hard, expensive when soft
print("hard labels, 10 classes:", label_rate_bits(10))
print("soft-label bound, 1000 classes:", round(soft_label_rate_bound(1000, 2.0**-24)), "bits")
