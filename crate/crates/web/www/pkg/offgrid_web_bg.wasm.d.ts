/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demooutcome_free: (a: number, b: number) => void;
export const beamPattern: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const demooutcome_iterations: (a: number) => number;
export const demooutcome_nmse_offgrid: (a: number) => number;
export const demooutcome_nmse_ongrid: (a: number) => number;
export const demooutcome_offgrid_deg: (a: number) => [number, number];
export const demooutcome_offgrid_power: (a: number) => [number, number];
export const demooutcome_ongrid_deg: (a: number) => [number, number];
export const demooutcome_ongrid_power: (a: number) => [number, number];
export const demooutcome_true_deg: (a: number) => [number, number];
export const demooutcome_true_power: (a: number) => [number, number];
export const layoutText: (a: number, b: number, c: number) => [number, number, number, number];
export const leakageMap: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const runDemo: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
