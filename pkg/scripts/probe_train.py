"""Loss-trajectory probe: does the benchmark model actually learn in 200 steps?"""

import sys

sys.path.insert(0, "src")

import numpy as np

from structattn import frontend as fe
from structattn import mean_field as mf
from structattn import tasks as tk
from structattn.tensor import Tensor

variant = sys.argv[1] if len(sys.argv) > 1 else "none"
lr = float(sys.argv[2]) if len(sys.argv) > 2 else 0.03
opt_kind = sys.argv[3] if len(sys.argv) > 3 else "adam"
noise = float(sys.argv[4]) if len(sys.argv) > 4 else 0.2
scales = int(sys.argv[5]) if len(sys.argv) > 5 else 2

spec = fe.ModelSpec(
    in_channels=3,
    image_hw=(32, 32),
    scales=scales,
    head_channels=4,
    inference=mf.InferenceConfig(rank=1, variant=variant, iterations=1),
)
rng = np.random.default_rng(0)
params = fe.init_params(spec, rng)
train = [tk.gen_task("segmentation", 32, 32, seed=100 + i, noise=noise) for i in range(8)]
evals = [tk.gen_task("segmentation", 32, 32, seed=900 + i, noise=noise) for i in range(8)]
opt = fe.OptimizerConfig(kind=opt_kind, learning_rate=lr, momentum=0.9)
state = fe.init_optimizer_state()

for step in range(200):
    batch = [train[(step * 4 + j) % 8] for j in range(4)]
    params, state, loss = fe.train_step(batch, params, state, spec, opt, seed=step)
    if step % 20 == 0 or step == 199:
        print(f"step {step:3d} loss {loss:.4f}", flush=True)

accs, ious = [], []
for s in evals:
    pred = fe.predict(s.image, params, spec, seed=0)
    rep = tk.eval_seg(tk.logits_to_labels(pred), s.labels, 4)
    accs.append(rep.values["pix_acc"])
    ious.append(rep.values["mean_iou"])
print(f"eval pixAcc {np.mean(accs):.4f} mIoU {np.mean(ious):.4f}")
