"""Parameter counts for the full and toy configurations and a few kernel/width variants."""
from d2former.model import D2FormerConfig, count_params

variants = {
    "full (default)": D2FormerConfig(),
    "ffn_mult=4": D2FormerConfig(ffn_mult=4),
    "ffn_mult=4, dp_kernel=(3,5)": D2FormerConfig(ffn_mult=4, dp_kernel=(3, 5)),
    "C=16": D2FormerConfig(C=16),
    "C=64": D2FormerConfig(C=64),
    "toy": D2FormerConfig.toy(),
}
for name, cfg in variants.items():
    n = count_params(cfg)
    band = "in band" if 0.70e6 <= n <= 1.05e6 else ""
    print(f"{name:30s} {n:>10,d}  {n / 0.87e6:6.2f}x of 0.87M  {band}")
