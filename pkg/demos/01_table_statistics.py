"""
Statistics on the bundled 16-subject accuracy table
===================================================

Means, sample SDs, paired Wilcoxon tests between channel-selection
scenarios, and the participant screen.
"""
import numpy as np

from neurocam.stats import (
    PairedSample, chance_level, format_summary, load_table1, majority_baseline,
    select_participants, summarize_table, wilcoxon_signed_rank,
)

table = load_table1()
print(f"{len(table.subjects)} subjects, scenarios: {', '.join(table.rows)}")

# column summaries plus the three pairwise comparisons
print(format_summary(summarize_table(table)))

# the exact test enumerates all 2^16 sign flips over the mid-ranks
a, b = table.column("all64", "overall"), table.column("gradcam17", "overall")
res = wilcoxon_signed_rank(PairedSample(a, b, table.subjects))
print(f"\nall64 vs gradcam17: W+={res.w_plus}, W-={res.w_minus}, p={res.p_two_sided:.5f} ({res.method})")

# the table's chance column is data; two estimators for comparison
n_test = 93
print(f"\nbinomial chance level at n={n_test}: {chance_level(n_test):.2f}%")
print(f"majority baseline for 53 L / 40 R: {majority_baseline(['L'] * 53 + ['R'] * 40):.2f}%")
print(f"bundled chance column: {table.chance().min():.2f} .. {table.chance().max():.2f}")

kept = select_participants(table.rows["all64"], margin=10)
print(f"\nsubjects at least 10 points above chance: {len(kept)} of {len(table.subjects)}")
gap = table.column("all64", "overall") - table.chance()
print(f"smallest margin: subject {table.subjects[int(np.argmin(gap))]} at {gap.min():.2f} points")
