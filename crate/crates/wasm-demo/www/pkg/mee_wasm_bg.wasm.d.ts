/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_ecology_free: (a: number, b: number) => void;
export const ecology_height: (a: number) => number;
export const ecology_inspect: (a: number, b: number, c: number) => [number, number];
export const ecology_mean_entropy: (a: number) => number;
export const ecology_new: (a: number) => [number, number, number];
export const ecology_noise_fraction: (a: number) => number;
export const ecology_population: (a: number) => number;
export const ecology_render_rgba: (a: number) => [number, number];
export const ecology_step: (a: number, b: number) => number;
export const ecology_tick: (a: number) => number;
export const ecology_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
