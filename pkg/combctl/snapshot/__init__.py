from combctl.snapshot.densities import StateSnapshot, density_rows
