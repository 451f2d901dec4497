/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_heatmap_free: (a: number, b: number) => void;
export const attentionHeatmap: (a: number, b: number, c: number, d: number) => [number, number, number];
export const demoSide: () => number;
export const dualBranch: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const encodeLayout: (a: number, b: number, c: number) => [number, number, number, number];
export const heatmap_cols: (a: number) => number;
export const heatmap_rows: (a: number) => number;
export const heatmap_values: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
