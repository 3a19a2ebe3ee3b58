"""Fresh adapters leave the backbone untouched; merging folds them back in."""
import numpy as np

from surgidepth.autodiff import constant
from surgidepth.lora import AdaptedProjection, Projection, init_pair, linear, lora_forward, merge, unmerge

rng = np.random.default_rng(0)
d, r = 32, 4
base = Projection(constant(rng.normal(size=(d, d))), constant(rng.normal(size=d)))
pair = init_pair(r, d, d, seed=1)
proj = AdaptedProjection(base, pair)
x = constant(rng.normal(size=(5, d)))

frozen = linear(x, base.weight, base.bias).data
print("B = 0, max |adapted - frozen|:", np.abs(lora_forward(proj, x).data - frozen).max())

# pretend some training happened
pair.B.data[:] = rng.normal(0, 0.1, pair.B.shape)
adapted = lora_forward(proj, x).data
merged = merge(proj)
print("trained, max |adapted - frozen|:", np.abs(adapted - frozen).max())
print("merged vs adapted:", np.abs(linear(x, merged.weight, merged.bias).data - adapted).max())
print("unmerge restores W0:", np.abs(unmerge(merged, pair).weight.data - base.weight.data).max())
print("adapter params:", pair.A.size + pair.B.size, "vs full matrix:", d * d)
