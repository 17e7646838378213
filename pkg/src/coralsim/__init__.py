"""coralsim: structured-grid simulator for a chemotaxis-fluid model of
broadcast coral fertilization.

Four coupled unknowns on an axis-aligned box: sperm density n, egg density m,
egg-released chemical signal c, and an incompressible fluid velocity u.  The
scheme preserves discrete counterparts of the model's conservation laws
(sperm-minus-egg mass), monotone masses, maximum principles, nonnegativity and
energy/dissipation budgets; see `coralsim.diagnostics` for the monitored set.
"""

__version__ = "0.1.0"
