"""Train the toy model on synthetic scenes and watch loss and delta move."""
from surgidepth.datagen import synth_dataset
from surgidepth.evaluation import evaluate_dataset
from surgidepth.model import PROFILES, build_model
from surgidepth.train import TrainConfig, fit, tensor_digest

cfg = PROFILES["toy"]
data = synth_dataset(16, seed=0, h=cfg.img_h, w=cfg.img_w)
model = build_model(cfg, rank=4, seed=0)
frozen = [t for _, t in model.named_frozen()]
digest = tensor_digest(frozen)


def score(m):
    return evaluate_dataset([(m.predict(s.image), s.depth) for s in data])


before = score(model)
log = fit(model, data, TrainConfig(lr=1e-3, batch_size=8, epochs=100, seed=0))
after = score(model)

for e in (0, 9, 49, 99):
    print(f"epoch {e + 1:3d}  loss {log.epoch_loss[e]:.4f}")
print(f"delta < 1.25: {before.delta:.3f} -> {after.delta:.3f}")
print(f"abs_rel:      {before.abs_rel:.3f} -> {after.abs_rel:.3f}")
print("backbone unchanged:", tensor_digest(frozen) == digest)
d = model.predict(data[0].image).values
print(f"first scene depth range: {d.min():.1f} .. {d.max():.1f} mm")
