"""Check every gradient of the full model against central finite differences.

Run:  python3 demos/02_gradient_check.py

The model is shrunk to 8 feature channels and widths of at most 16, runs
in float64, and sees two horizontal and two vertical noisy lines.  The
total loss and each loss term alone are differentiated.  The table lists
the worst relative error per module and whether that term reaches the
module at all: the text loss never touches the reconstruction network, and
the reconstruction loss never touches the classifier heads.
"""
from ostr.gradcheck import global_grad_check

report = global_grad_check()
print("term\tmodule\tmax rel. error\treached")
print("\n".join(report.lines()))
print(f"\n{report.entries} entries, {report.kink_retries} retaken with a smaller step near ReLU kinks, "
      f"{report.seconds:.0f}s")
print("PASS" if report.passed() else "FAIL", f"(worst {report.worst():.2e} vs tolerance {report.tolerance:g})")
