from ctbnal.design.optimize import minimize_projected, project_simplex, trace_to_frame
from ctbnal.design.parameters import (
    CriterionValue,
    RateSampleSet,
    VariationalRateParams,
    bhc_parameters,
    draw_rate_samples,
    eig_parameters,
    kl_ctbn_rates,
    minimize_vbhc_parameters,
    vbhc_parameter_gradients,
    vbhc_parameters,
)
from ctbnal.design.selection import (
    STRATEGIES,
    TARGETS,
    CriterionScorer,
    candidate_interventions,
    select_intervention,
)
from ctbnal.design.structure import (
    StructureSampleSet,
    VariationalStructureParams,
    bhc_structure,
    draw_structure_samples,
    eig_structure,
    kl_marginal_structures_approx,
    minimize_vbhc_structure,
    vbhc_structure,
    vbhc_structure_gradients,
)
