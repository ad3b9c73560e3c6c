//! Urban and agricultural area projection driven by potential changes.
//!
//! Each step adds `bq * (q(t+5) - q(t))` to the previous area, floors the
//! result at zero and then makes the cell fit: agricultural land gives way
//! first, and urban land is capped at the cell area.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::worldmodel::Year;
use crate::{Error, Result};

/// One area update: `max(0, prev + bq * (q_next - q_prev))`.
pub fn step_area(prev: f64, q_prev: f64, q_next: f64, bq: f64) -> f64 {
    (prev + bq * (q_next - q_prev)).max(0.0)
}

/// Outcome of fitting one cell's areas into its capacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capacity {
    pub urban: f64,
    pub agri: f64,
    /// Urban area alone exceeded the cell and was capped.
    pub urban_capped: bool,
}

/// Shrinks agricultural area (then urban area) so that
/// `urban + agri <= cell_area` holds exactly in floating point.
pub fn enforce_capacity(urban: f64, agri: f64, cell_area: f64) -> Capacity {
    if urban > cell_area {
        return Capacity {
            urban: cell_area,
            agri: 0.0,
            urban_capped: true,
        };
    }
    let mut agri = agri;
    if urban + agri > cell_area {
        agri = (cell_area - urban).max(0.0);
        // The subtraction can round up by an ulp.
        while agri > 0.0 && urban + agri > cell_area {
            agri = agri.next_down().max(0.0);
        }
    }
    Capacity {
        urban,
        agri,
        urban_capped: false,
    }
}

/// Potential fields by year for one area variant, aligned with the grid.
pub type PotentialSeries = BTreeMap<Year, Vec<f64>>;

/// Areas per year; `urban[k][g]` is cell `g` in `years[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaTrajectory {
    pub baseline_year: Year,
    pub years: Vec<Year>,
    pub urban: Vec<Vec<f64>>,
    pub agri: Vec<Vec<f64>>,
    /// `(year, cell)` pairs where urban area hit the cell capacity.
    pub urban_capped: Vec<(Year, usize)>,
}

impl AreaTrajectory {
    pub fn index_of(&self, year: Year) -> Option<usize> {
        self.years.iter().position(|y| *y == year)
    }
}

/// Baseline areas and response slopes for a projection.
#[derive(Debug, Clone, Copy)]
pub struct AreaInputs<'a> {
    pub cell_area: &'a [f64],
    pub urban: &'a [f64],
    pub agri: &'a [f64],
    pub bq_urban: f64,
    pub bq_agri: f64,
}

/// Applies the area update and the capacity rule step by step from
/// `years[0]` (the baseline) through the last year.
pub fn project_areas(
    inputs: AreaInputs<'_>,
    urban_potential: &PotentialSeries,
    agri_potential: &PotentialSeries,
    years: &[Year],
) -> Result<AreaTrajectory> {
    let n = inputs.cell_area.len();
    if inputs.urban.len() != n || inputs.agri.len() != n {
        return Err(Error::InvalidInput("baseline areas do not match the grid".into()));
    }
    let Some(&baseline_year) = years.first() else {
        return Err(Error::InvalidInput("no projection years".into()));
    };
    let field = |series: &'_ PotentialSeries, year: Year, what: &str| -> Result<Vec<f64>> {
        let f = series
            .get(&year)
            .ok_or_else(|| Error::Missing(format!("{what} potential for {year}")))?;
        if f.len() != n {
            return Err(Error::InvalidInput(format!("{what} potential for {year} has {} cells", f.len())));
        }
        Ok(f.clone())
    };

    let mut capped = Vec::new();
    let fit = |urban: &[f64], agri: &[f64]| -> Vec<Capacity> {
        (0..n)
            .into_par_iter()
            .map(|g| enforce_capacity(urban[g], agri[g], inputs.cell_area[g]))
            .collect()
    };
    let split = |cells: Vec<Capacity>, year: Year, capped: &mut Vec<(Year, usize)>| {
        capped.extend(cells.iter().enumerate().filter(|(_, c)| c.urban_capped).map(|(g, _)| (year, g)));
        let urban = cells.iter().map(|c| c.urban).collect::<Vec<_>>();
        let agri = cells.iter().map(|c| c.agri).collect::<Vec<_>>();
        (urban, agri)
    };

    let (u0, a0) = split(fit(inputs.urban, inputs.agri), baseline_year, &mut capped);
    let mut urban = vec![u0];
    let mut agri = vec![a0];
    let mut q_urban = field(urban_potential, baseline_year, "urban")?;
    let mut q_agri = field(agri_potential, baseline_year, "agri")?;
    for &year in &years[1..] {
        let next_q_urban = field(urban_potential, year, "urban")?;
        let next_q_agri = field(agri_potential, year, "agri")?;
        let prev_u = urban.last().unwrap();
        let prev_a = agri.last().unwrap();
        let stepped: Vec<Capacity> = (0..n)
            .into_par_iter()
            .map(|g| {
                let u = step_area(prev_u[g], q_urban[g], next_q_urban[g], inputs.bq_urban);
                let a = step_area(prev_a[g], q_agri[g], next_q_agri[g], inputs.bq_agri);
                enforce_capacity(u, a, inputs.cell_area[g])
            })
            .collect();
        let (u, a) = split(stepped, year, &mut capped);
        urban.push(u);
        agri.push(a);
        q_urban = next_q_urban;
        q_agri = next_q_agri;
    }
    Ok(AreaTrajectory {
        baseline_year,
        years: years.to_vec(),
        urban,
        agri,
        urban_capped: capped,
    })
}
