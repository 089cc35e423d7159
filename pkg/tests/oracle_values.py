"""Reference numbers computed independently (extended precision) and frozen here."""

SEMICIRCLE_M_AT_I = 0.618033988749894848j
SEMICIRCLE_RHO0_ETA_1EM4 = 0.318293971087368839
ARCSINE_RHO0 = 0.159154943091895336
REAL_LAW_MEDIAN = 0.544763529191406894
ONE_MINUS_EXP_M1 = 0.632120558828557678
ONE_MINUS_EXP_M1_5 = 0.776869839851570171
KS_QUANTILE_0997_N1E4 = 0.018013822505866337

UNIFORM200_RHO_ETA_1EM4 = 0.368729484986057787
UNIFORM200_RHO_ETA_1EM5 = 0.368746639020398446
UNIFORM200_RHO0 = 0.368748545024214075
CONTINUUM_UNIFORM_RHO_ETA_1EM6 = 0.371009453155487583

GENERIC_Z = 0.3 + 0.5j
GENERIC_W_ALPHA = 0.117758701031725530 + 0.368825230078262950j
GENERIC_W_BETA = -0.605199693216996722 + 0.507744217489753103j
GENERIC_M = 0.097115781844458137 + 0.713219753081666464j

# single measured constant for the inverse-Jacobian and perturbation bounds;
# the largest ratio seen over the test measures is about 1.62
STABILITY_C = 2.0
