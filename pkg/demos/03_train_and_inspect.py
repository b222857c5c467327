"""Train a small recognizer and look inside it.

Run:  python3 demos/03_train_and_inspect.py [steps]

A quarter-size benchmark (1250 training lines) is generated in memory and
the full model is trained with rotation plus the orientation, content and
reconstruction losses.  Afterwards the script reports accuracy by
orientation, how well the two classifier heads read the disentangled
vectors, the feature-similarity probe, and how often swapping orientation
vectors turns a reconstruction sideways.
"""
import logging
import sys

from ostr.ablation import benchmark_data
from ostr.config import RunConfig
from ostr.evaluation import ModelRecognizer, evaluate, head_accuracy, reconstruction_fidelity, similarity_probe
from ostr.train import train

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600

config = RunConfig({"data.train": 1250, "data.val": 200, "data.test": 300, "data.vertical_test": 200,
                    "train.steps": steps})
charset, splits = benchmark_data(config)
result = train(splits["train"], charset, config, splits["val"], log_every=100)
print(f"trained {len(result.history)} steps in {result.seconds:.0f}s, best validation at step {result.best_step}")

pc = config.preprocess_config()
rec = ModelRecognizer(result.model, pc)
test = evaluate(rec, splits["test"], charset)
vert = evaluate(rec, splits["test_vertical"], charset)
print(f"mixed test ACC {test.acc:.3f} NED {test.ned:.3f}; by orientation {test.by_orientation}")
print(f"vertical-only ACC {vert.acc:.3f}")

heads = head_accuracy(result.model, splits["test"], charset, pc)
print(f"orientation head {heads['orientation']:.3f}, content head {heads['content']:.3f} "
      f"over {heads['bundles']} characters")

for source in ("raw", "content"):
    r = similarity_probe(result.model, charset, source, 100, 0, pc, config.noise())
    print(f"{source:>7} features: same orientation {r.s_o_mean:.3f}, same content {r.s_c_mean:.3f}")

fid = reconstruction_fidelity(result.model, splits["test"], charset, pc)
print(f"reconstruction MSE {fid.mse:.4f}; swapped outputs turned sideways {fid.swap_correct:.1%} of {fid.swaps}")
