# Heavy-tail eigenvalue lab
