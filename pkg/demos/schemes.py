"""How each pseudo-labeling scheme turns two predictions into training targets.

Run: python3 demos/schemes.py
"""
import numpy as np

from pseudolab.pseudolabel import Scheme, decide

TAU = 0.9

# Each case is (primary prediction, auxiliary prediction) over three classes.
CASES = {
    "both confident, disagree": ([0.95, 0.03, 0.02], [0.02, 0.96, 0.02]),
    "only the auxiliary is sure": ([0.50, 0.30, 0.20], [0.05, 0.93, 0.02]),
    "only the primary is sure": ([0.92, 0.05, 0.03], [0.40, 0.40, 0.20]),
    "neither is sure": ([0.60, 0.30, 0.10], [0.20, 0.70, 0.10]),
}


def show(d) -> str:
    if not d.confident:
        return f"masked (best {d.confidence:.2f})"
    return f"class {d.target_class} from {d.source.value} ({d.confidence:.2f})"


for name, (pF, pA) in CASES.items():
    print(f"\n{name}:  p_F={pF}  p_A={pA}  tau={TAU}")
    for scheme in Scheme:
        dF, dA = decide(scheme, np.array(pF), np.array(pA), TAU)
        aux = "(no auxiliary network)" if scheme is Scheme.FIXMATCH else show(dA)
        print(f"  {scheme.value:>14}  primary <- {show(dF):34}  auxiliary <- {aux}")

# Cross supervision never lets a network label itself: the primary target
# depends only on the auxiliary prediction, whatever the primary says.
rng = np.random.default_rng(0)
pA = np.array([0.05, 0.93, 0.02])
targets = {decide(Scheme.CROSS, rng.dirichlet(np.ones(3)), pA, TAU)[0].target_class
           for _ in range(1000)}
print(f"\nCross: 1000 random primary predictions, primary target always {targets}")
