# Business logic services 