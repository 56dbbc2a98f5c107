# capsym: capillary symmetrization and sharp inequality checks
