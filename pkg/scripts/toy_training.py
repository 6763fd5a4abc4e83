"""Train the toy model for 200 steps on three synthetic 5 dB pairs and report loss and SI-SNR."""
import argparse
import json

from d2former.desk import TOY_LR, toy_run

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--steps", type=int, default=200)
p.add_argument("--lr", type=float, default=TOY_LR)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--json", help="also write the summary here")
args = p.parse_args()

run = toy_run(args.steps, lr=args.lr, seed=args.seed, log=print)
summary = {
    "steps": args.steps, "lr": args.lr, "seed": args.seed,
    "initial_loss": run.losses[0], "final_loss": run.losses[-1], "loss_ratio": run.loss_ratio,
    "noisy_si_snr_db": run.noisy_si_snr, "enhanced_si_snr_db": run.enhanced_si_snr,
    "improvement_db": run.improvement_db, "seconds": run.seconds,
}
print(json.dumps(summary, indent=2))
if args.json:
    with open(args.json, "w") as fh:
        json.dump(summary, fh, indent=2)
