"""Anonymity sets on the six-AS toy graph, with and without position leakage.

    python3 demos/anonymity_sets.py
"""

from splitonion.topo import CompromiseScenario, anonymity_sets, build_toy_topology, format_graph, multi_compromise

g = build_toy_topology()
print(format_graph(g))
path = g.paths[0]

for known in (False, True):
    a = anonymity_sets(g, CompromiseScenario(path, {2}, position_known=known))
    label = "position leaked" if known else "position hidden"
    print(f"AS2 alone, {label}: senders {sorted(a.senders)} receivers {sorted(a.receivers)} "
          f"-> |S_r| = {a.size_s} x {a.size_d} = {a.size_r}")

for corr in (True, False):
    r = multi_compromise(g, CompromiseScenario(path, {0, 2}, correlating=corr))
    print(f"AS0 and AS2, {'correlating' if corr else 'not correlating'}: |S_r| = {r}")
