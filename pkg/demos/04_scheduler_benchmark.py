"""
Adaptive vs static learning rate
================================

Both runs start from the same weights and see the same batches; only the
schedule differs.  On this easy task the plateau rule rarely fires before
the target is hit, so expect ties.  At higher noise the result depends on
the seed, and the adaptive run is sometimes the slower one.
"""

# %%
from nial import model as M
from nial import runner as R

for noise, lr in ((0.05, 1e-2), (0.3, 3e-2)):
    cfg = R.TrainConfig(
        seed=1,
        model=M.ModelConfig.tiny(64, 4),
        synth=R.SynthSpec(classes=4, per_class=200, length=64, noise=noise, seed=1),
        val_frac=0.2,
        test_frac=0.0,
        epochs=30,
        lr=lr,
        early_stop=False,
    )
    bench = R.benchmark_lr(cfg, loss_threshold=0.05)
    d = bench.to_dict()
    print(f"noise {noise} lr {lr}: adaptive {d['adaptive']['epochs_to_threshold']}, "
          f"static {d['static']['epochs_to_threshold']}, ratio {d['epoch_ratio']}")
    print("  adaptive lr", sorted(set(bench.adaptive.lr_trajectory), reverse=True))
