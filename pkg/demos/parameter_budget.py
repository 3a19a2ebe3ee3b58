"""How few numbers the adapters add, per model profile and rank."""
from surgidepth.model import PROFILES, count_parameters

for name, cfg in PROFILES.items():
    print(f"{name}: depth {cfg.depth}, dim {cfg.dim}, heads {cfg.heads}")
    for r in (1, 4, 8, 16):
        c = count_parameters(cfg, r)
        print(f"  rank {r:2d}  lora {c['lora']:>9,d}  decoder {c['decoder']:>9,d}"
              f"  total {c['total']:>12,d}  lora share {100 * c['lora_ratio']:.3f}%")
