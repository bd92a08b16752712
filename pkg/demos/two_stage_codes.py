"""
Two-stage gradient codes by hand
================================

Five workers, seven data partitions. Workers 0-2 start alone; worker 0
finishes its four partitions before the census, workers 1 and 2 are still
busy, and workers 3 and 4 join for the second stage with one straggler
tolerated.
"""
import numpy as np

from tsdcfl import coding

speeds = np.array([2.0, 1.0, 1.0, 1.0, 1.0])
stage1 = {0: [0, 1, 2, 3], 1: [1, 2], 2: [3, 4, 5]}
code = coding.build_two_stage_code(7, 1, stage1, completed=[0], new_workers=[3, 4], speeds=speeds)

print("credited partitions:", sorted(set(range(7)) - set(code.remaining)))
print("remaining partitions:", code.remaining)
print("stage-2 rows belong to workers", code.post_census)
print("reduced support (continuers first, then new workers):")
print(code.reduced.support.astype(int))

B = code.combined()
print("combined matrix, one row per worker:")
print(np.round(B.entries, 3))

# every single straggler among the four post-census rows is survivable
n_c = len(code.completers)
for lost in range(n_c, B.rows):
    survivors = [i for i in range(B.rows) if i != lost]
    res = coding.decode(B, survivors)
    print(f"row {lost} lost -> decode ok={res.success}, residual {res.residual:.1e}")

# decode real numbers: partial gradients of a random problem
rng = np.random.default_rng(0)
partials = rng.standard_normal((7, 3))
survivors = [0, 1, 3, 4]
res = coding.decode(B, survivors)
sent = [coding.encode_partials(B.entries[i], partials) for i in survivors]
g = coding.aggregate_decode(res.coefficients, sent)
print("recovered sum:", np.round(g, 6))
print("true sum:     ", np.round(partials.sum(axis=0), 6))

# for comparison, the one-stage baselines with the same tolerance
print("cyclic repetition, 6 workers, s=1:")
print(coding.cyclic_repetition(6, 1).support.astype(int))
print("fractional repetition, 6 workers, s=1:")
print(coding.fractional_repetition(6, 1).support.astype(int))
