"""Arc elasticities of the fitted cubic DRFs for the three ranking metrics."""

from cmma.drf import PolynomialDrf, elasticity, evaluate

FITS = {
    "NDCG": ((3369.9, -18593.8, 16733.0), (0.0021, 0.006)),
    "MAP": ((2113.3, -17254.4, 16191.1), (0.00156,)),
    "MRR": ((3227.6, -21411.1, 19229.7), (0.00153,)),
}

if __name__ == "__main__":
    for name, (beta, points) in FITS.items():
        drf = PolynomialDrf(beta)
        for m in points:
            print(f"{name:5} m={m:<8} mu={evaluate(drf, m):8.4f}  elasticity {elasticity(drf, m):.2f}%")
