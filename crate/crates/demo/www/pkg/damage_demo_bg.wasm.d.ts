/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_localized_free: (a: number, b: number) => void;
export const augment: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const classNames: () => [number, number];
export const localize: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const localized_grid_height: (a: number) => number;
export const localized_grid_width: (a: number) => number;
export const localized_heatmap: (a: number) => [number, number];
export const localized_overlay: (a: number) => [number, number];
export const localized_regions: (a: number) => [number, number];
export const synth: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
